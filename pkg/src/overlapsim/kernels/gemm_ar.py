"""Persistent GEMM + allreduce over the node team's switch-assisted reduction.

Producers stride tile ids persistently, release-storing one ready flag per
tile into their own flag array. Consumers poll every peer's copy of a tile's
flag, then either

 - one-shot: every rank team-reduces every tile into its own plain output, or
 - two-shot: tiles are owned round-robin by rank; the owner team-reduces and
   team-broadcasts into the symmetric output, then the owner-class consumers
   run a set-peers / wait-own / reset handshake before tearing down flags.

Single node only: the team reduction spans exactly one node.
"""

from __future__ import annotations

import numpy as np

from ..shmem import SymmetricHeap
from ..simengine import Engine
from ..swizzle import cdiv, swizzle_2d
from .context import WorkloadContext, WorkloadRun, check_dtype


def gemm_allreduce(a_shards, b_shards, ctx: WorkloadContext,
                   use_multimem_st: bool | None = None) -> WorkloadRun:
    """Returns per-rank copies of sum_w(a_w @ b_w.T), shape [M, N]."""
    topo = ctx.topology
    world = topo.world_size
    if topo.nnodes != 1:
        raise ValueError("allreduce workload requires a single node (node-team reduction)")
    if len(a_shards) != world or len(b_shards) != world:
        raise ValueError(f"need {world} shards per operand")
    dtype = check_dtype(*a_shards, *b_shards)
    m, k = a_shards[0].shape
    n = b_shards[0].shape[0]
    if n % ctx.block_n != 0:
        raise ValueError(f"N={n} must be divisible by block_n={ctx.block_n}")
    for a, b in zip(a_shards, b_shards):
        if a.shape != (m, k) or b.shape != (n, k):
            raise ValueError("ragged shards")
    two_shot = ctx.use_multimem_st if use_multimem_st is None else use_multimem_st

    num_pid_m, num_pid_n = cdiv(m, ctx.block_m), n // ctx.block_n
    ntiles = num_pid_m * num_pid_n
    engine = Engine(topo, seed=ctx.seed)
    heap = SymmetricHeap(topo, engine,
                         data_bytes=2 * m * n * dtype.itemsize + 4096,
                         signal_slots=ntiles + world * ctx.num_comm_sms + 16)
    symm_c = heap.alloc(m * n * dtype.itemsize)
    symm_ar = heap.alloc(m * n * dtype.itemsize)
    tile_ready = heap.alloc_signals(ntiles)
    mst_sig = heap.alloc_signals(world * ctx.num_comm_sms)
    done = heap.alloc_signals(1)
    outputs = [np.zeros((m, n), dtype=dtype) for _ in range(world)]

    for rank in range(world):
        for sm in range(ctx.num_gemm_sms):
            engine.spawn(rank, f"gemm{sm}", _producer(
                engine, heap, ctx, rank, sm, a_shards[rank], b_shards[rank],
                symm_c, tile_ready, m, n, k))
        for cid in range(ctx.num_comm_sms):
            engine.spawn(rank, f"ar{cid}", _consumer(
                engine, heap, ctx, rank, cid, symm_c, symm_ar, tile_ready, mst_sig,
                done, outputs[rank], m, n, dtype, two_shot))
        engine.spawn(rank, "coord", _coordinator(
            engine, heap, ctx, rank, symm_ar, tile_ready, done, outputs[rank],
            m, n, dtype, ntiles, two_shot))
    trace = engine.run()
    return WorkloadRun(outputs, trace, heap,
                       {"symm_c": symm_c, "symm_ar": symm_ar,
                        "tile_ready": tile_ready, "mst_sig": mst_sig})


def _tile_bounds(tile, num_pid_n, block_m, block_n, m):
    pid_m, pid_n = tile // num_pid_n, tile % num_pid_n
    r0, r1 = pid_m * block_m, min((pid_m + 1) * block_m, m)
    return r0, r1, pid_n * block_n, (pid_n + 1) * block_n


def _producer(engine, heap, ctx, rank, sm, a, b, symm_c, tile_ready, m, n, k):
    num_pid_m, num_pid_n = cdiv(m, ctx.block_m), n // ctx.block_n
    c_view = heap.view(symm_c, rank, a.dtype, (m, n))
    for tile in range(sm, num_pid_m * num_pid_n, ctx.num_gemm_sms):
        pid_m, pid_n = swizzle_2d(tile, num_pid_m, num_pid_n, ctx.group_m)
        r0, r1 = pid_m * ctx.block_m, min((pid_m + 1) * ctx.block_m, m)
        c0, c1 = pid_n * ctx.block_n, (pid_n + 1) * ctx.block_n
        yield from engine.compute_tile(r1 - r0, c1 - c0, k, name="gemm_tile",
                                       tile=pid_m * num_pid_n + pid_n)
        c_view[r0:r1, c0:c1] = a[r0:r1] @ b[c0:c1].T
        heap.st(tile_ready, pid_m * num_pid_n + pid_n, 1, pe=rank, scope="gpu",
                semantic="release", name="tile_ready")


def _consumer(engine, heap, ctx, rank, cid, symm_c, symm_ar, tile_ready, mst_sig,
              done, out, m, n, dtype, two_shot):
    world = ctx.topology.world_size
    ncs = ctx.num_comm_sms
    num_pid_n = n // ctx.block_n
    ntiles = cdiv(m, ctx.block_m) * num_pid_n
    if not two_shot:
        for tile in range(cid, ntiles, ncs):
            for w in range(world):
                yield from heap.wait(tile_ready, tile, 1, pe=w, scope="sys",
                                     semantic="acquire", value=1, note="peer_tile_ready")
            r0, r1, c0, c1 = _tile_bounds(tile, num_pid_n, ctx.block_m, ctx.block_n, m)
            block = yield from heap.multimem_ld_reduce_block(
                symm_c, rank, dtype, (m, n), r0, r1 - r0, c0, c1 - c0)
            out[r0:r1, c0:c1] = block
    else:
        for tile in range(cid + rank * ncs, ntiles, ncs * world):
            for w in range(world):
                yield from heap.wait(tile_ready, tile, 1, pe=w, scope="sys",
                                     semantic="acquire", value=1, note="peer_tile_ready")
            r0, r1, c0, c1 = _tile_bounds(tile, num_pid_n, ctx.block_m, ctx.block_n, m)
            block = yield from heap.multimem_ld_reduce_block(
                symm_c, rank, dtype, (m, n), r0, r1 - r0, c0, c1 - c0)
            yield from heap.multimem_st_block(symm_ar, rank, block, (m, n), r0, c0)
        # handshake: set my slot on every peer, wait for every peer's, reset mine
        for w in range(world):
            heap.st(mst_sig, rank * ncs + cid, 1, pe=w, scope="sys",
                    semantic="release", name="mst_set")
        for w in range(world):
            yield from heap.wait(mst_sig, w * ncs + cid, 1, pe=rank, scope="sys",
                                 semantic="acquire", value=1, note="mst_wait")
            heap.st(mst_sig, w * ncs + cid, 0, pe=rank, scope="sys",
                    semantic="relaxed", name="mst_reset")
        # owners tear down their tiles' flags on every peer
        for tile in range(cid + rank * ncs, ntiles, ncs * world):
            for w in range(world):
                heap.st(tile_ready, tile, 0, pe=w, scope="sys", semantic="relaxed",
                        name="tile_reset")
    heap.atomic_add(done, 0, 1, pe=rank, semantic="release")


def _coordinator(engine, heap, ctx, rank, symm_ar, tile_ready, done, out, m, n,
                 dtype, ntiles, two_shot):
    world = ctx.topology.world_size
    ncs = ctx.num_comm_sms
    yield from heap.wait(done, 0, 1, pe=rank, semantic="acquire", value=ncs,
                         note="consumers_done")
    if not two_shot:
        # peers may still be polling flags; rendezvous before the teardown
        yield from heap.sync_all(rank)
        for tile in range(ntiles):
            if (tile % (ncs * world)) // ncs == rank:
                for w in range(world):
                    heap.st(tile_ready, tile, 0, pe=w, scope="sys", semantic="relaxed",
                            name="tile_reset")
    else:
        out[:] = heap.view(symm_ar, rank, dtype, (m, n))
    heap.st(done, 0, 0, pe=rank, semantic="relaxed", name="done_reset")
    yield from heap.barrier_all(rank)
