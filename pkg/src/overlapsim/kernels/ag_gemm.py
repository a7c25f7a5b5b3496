"""Overlapped allgather + GEMM on virtual ranks.

Each rank copies its row chunk into the symmetric workspace, barriers, then a
pull engine fetches the remaining chunks in (rank + i) % world order, raising
one arrival signal per source chunk. Compute workers walk tiles in swizzled
order and acquire-wait only on the chunks their rows touch, so with the
gather-mode swizzle the first tiles run with zero stall.
"""

from __future__ import annotations

import numpy as np

from ..shmem import SymmetricHeap, consume_token
from ..simengine import Engine
from ..swizzle import ag_gemm_tile_map, cdiv, swizzle_2d
from .context import WorkloadContext, WorkloadRun, check_dtype


def ag_gemm(a_shards, b_shards, ctx: WorkloadContext) -> WorkloadRun:
    """Returns per-rank C = concat(a_0..a_{w-1}) @ b_r.T of shape [M, N_per_rank]."""
    topo = ctx.topology
    world = topo.world_size
    if len(a_shards) != world or len(b_shards) != world:
        raise ValueError(f"need {world} shards per operand")
    dtype = check_dtype(*a_shards, *b_shards)
    m_per_rank, k = a_shards[0].shape
    n_per_rank = b_shards[0].shape[0]
    for a, b in zip(a_shards, b_shards):
        if a.shape != (m_per_rank, k):
            raise ValueError(f"ragged A shards: {a.shape} vs {(m_per_rank, k)}")
        if b.shape != (n_per_rank, k):
            raise ValueError(f"B shard must be [N_per_rank, K]-shaped, got {b.shape}")
    m = m_per_rank * world

    engine = Engine(topo, seed=ctx.seed)
    heap = SymmetricHeap(topo, engine,
                         data_bytes=m * k * dtype.itemsize + 4096,
                         signal_slots=world + 16)
    workspace = heap.alloc(m * k * dtype.itemsize)
    arrival = heap.alloc_signals(world)
    outputs = [np.zeros((m, n_per_rank), dtype=dtype) for _ in range(world)]

    for rank in range(world):
        engine.spawn(rank, "pull", _pull_engine(engine, heap, rank, a_shards[rank],
                                                workspace, arrival))
        for sm in range(ctx.num_gemm_sms):
            engine.spawn(rank, f"gemm{sm}",
                         _gemm_worker(engine, heap, ctx, rank, sm, b_shards[rank],
                                      workspace, arrival, outputs[rank], m, k, n_per_rank))
    trace = engine.run()
    return WorkloadRun(outputs, trace, heap, {"workspace": workspace, "arrival": arrival})


def _pull_engine(engine, heap: SymmetricHeap, rank, a_local, workspace, arrival):
    world = engine.topology.world_size
    m_per_rank, k = a_local.shape
    chunk_bytes = m_per_rank * k * a_local.dtype.itemsize
    yield from heap.putmem(heap.symm_at(workspace, rank), rank * chunk_bytes, a_local,
                           from_pe=rank, note="local_copy")
    heap.st(arrival, rank, 1, pe=rank, semantic="release", name="chunk_ready")
    yield from heap.barrier_all(rank)
    own = heap.view(workspace, rank, a_local.dtype)
    for i in range(1, world):
        src = (rank + i) % world
        dst = own[src * m_per_rank * k:(src + 1) * m_per_rank * k]
        yield from heap.getmem(dst, heap.symm_at(workspace, src), src * chunk_bytes,
                               from_pe=rank, note="pull_chunk")
        heap.notify(arrival, src, pe=rank, value=1)


def _gemm_worker(engine, heap, ctx: WorkloadContext, rank, sm, b_local, workspace,
                 arrival, out, m, k, n_per_rank):
    topo = ctx.topology
    m_per_rank = m // topo.world_size
    num_pid_m = cdiv(m, ctx.block_m)
    num_pid_n = cdiv(n_per_rank, ctx.block_n)
    tile_map = (ag_gemm_tile_map(m, rank, topo.world_size, topo.nnodes, ctx.block_m)
                if ctx.swizzle else None)
    a_all = heap.view(workspace, rank, b_local.dtype, (m, k))
    for step in range(sm, num_pid_m * num_pid_n, ctx.num_gemm_sms):
        pid_m, pid_n = swizzle_2d(step, num_pid_m, num_pid_n, ctx.group_m)
        if tile_map is not None:
            pid_m = int(tile_map[pid_m])
        r0, r1 = pid_m * ctx.block_m, min((pid_m + 1) * ctx.block_m, m)
        c0, c1 = pid_n * ctx.block_n, min((pid_n + 1) * ctx.block_n, n_per_rank)
        rank_beg = r0 // m_per_rank
        rank_end = (r1 - 1) // m_per_rank
        token = yield from heap.wait(arrival, rank_beg, rank_end - rank_beg + 1, pe=rank,
                                     semantic="acquire", value=1, note="wait_chunks")
        yield from engine.compute_tile(r1 - r0, c1 - c0, k, name="gemm_tile",
                                       tile=pid_m * num_pid_n + pid_n)
        a_tile = consume_token(a_all[r0:r1], token)
        out[r0:r1, c0:c1] = a_tile @ b_local[c0:c1].T
