"""Overlapped GEMM + reduce-scatter on virtual ranks.

Producers compute partial tiles in scatter-mode swizzled order. In the
non-fused path every finished tile bumps an atomic counter per output segment
it covers; the worker whose increment completes a segment release-stores that
segment's ready flag. Consumers then reduce:

 - reduce_order="ascending": flat deterministic pull -- for each source rank
   in ascending order, wait its flag for my segment, pull my rows, accumulate.
   Bitwise-comparable to the sequential reference.
 - reduce_order="ring": hierarchical -- per node (ring order) scatter inside
   the node (full-mesh pushes, or a neighbor ring when assume_full_mesh_links
   is off), locally reduce, p2p the node-partial to the owning rank's slot,
   and finish with a ring-order reduction over node slots.

The fused path skips flags entirely: producers store each tile's row slices
straight into the owning ranks' symmetric buffers, then a barrier and a local
reduction finish the job.
"""

from __future__ import annotations

import numpy as np

from ..shmem import SymmetricHeap
from ..simengine import Engine
from ..swizzle import cdiv, gemm_rs_tile_map, swizzle_2d
from .context import WorkloadContext, WorkloadRun, check_dtype, reduce_visit_order


def gemm_rs(input_shards, weight_shards, ctx: WorkloadContext,
            assume_full_mesh_links: bool = True) -> WorkloadRun:
    """Returns per-rank rows r of sum_w(input_w @ weight_w.T), [M_per_rank, N]."""
    topo = ctx.topology
    world = topo.world_size
    if len(input_shards) != world or len(weight_shards) != world:
        raise ValueError(f"need {world} shards per operand")
    dtype = check_dtype(*input_shards, *weight_shards)
    m, k_local = input_shards[0].shape
    n = weight_shards[0].shape[0]
    if m % world != 0:
        raise ValueError(f"M={m} must divide evenly across {world} ranks")
    for inp, w in zip(input_shards, weight_shards):
        if inp.shape != (m, k_local) or w.shape != (n, k_local):
            raise ValueError("ragged shards")
    m_per_rank = m // world
    lws = topo.local_world_size
    nnodes = topo.nnodes
    itemsize = dtype.itemsize

    out_bytes = m * n * itemsize
    scatter_bytes = nnodes * lws * m_per_rank * n * itemsize
    p2p_bytes = nnodes * m_per_rank * n * itemsize
    engine = Engine(topo, seed=ctx.seed)
    heap = SymmetricHeap(topo, engine,
                         data_bytes=out_bytes + scatter_bytes + p2p_bytes + 8192,
                         signal_slots=4 * world + nnodes * lws + 64)
    gemm_out = heap.alloc(out_bytes)
    seg_ready = heap.alloc_signals(world)   # per-segment "rows complete" flags
    counters = heap.alloc_signals(world)    # local tile counters per segment
    handles = {"gemm_out": gemm_out, "seg_ready": seg_ready, "counters": counters}

    outputs = [np.zeros((m_per_rank, n), dtype=dtype) for _ in range(world)]
    done = heap.alloc_signals(1)  # per-rank local count of finished producers

    if ctx.fuse_scatter:
        fused = heap.alloc(out_bytes)  # slot w holds source w's partial of my rows
        handles["fused_out"] = fused
        for rank in range(world):
            for sm in range(ctx.num_gemm_sms):
                engine.spawn(rank, f"gemm{sm}", _producer_fused(
                    engine, heap, ctx, rank, sm, input_shards[rank], weight_shards[rank],
                    fused, done, m, n, k_local))
            engine.spawn(rank, "rs", _fused_reducer(
                engine, heap, ctx, rank, fused, done, outputs[rank], m_per_rank, n, dtype))
        trace = engine.run()
        return WorkloadRun(outputs, trace, heap, handles)

    scatter_buf = heap.alloc(scatter_bytes)  # slot (node iteration, source local rank)
    p2p_buf = heap.alloc(p2p_bytes)          # slot = source node id
    recv_sig = heap.alloc_signals(nnodes * lws)
    p2p_sig = heap.alloc_signals(nnodes)
    ring_sig = heap.alloc_signals(nnodes * max(lws - 1, 1))
    handles.update({"scatter_buf": scatter_buf, "p2p_buf": p2p_buf})

    for rank in range(world):
        for sm in range(ctx.num_gemm_sms):
            engine.spawn(rank, f"gemm{sm}", _producer(
                engine, heap, ctx, rank, sm, input_shards[rank], weight_shards[rank],
                gemm_out, seg_ready, counters, m, n, k_local))
        if ctx.reduce_order == "ascending":
            engine.spawn(rank, "rs", _flat_reducer(
                engine, heap, ctx, rank, gemm_out, seg_ready, counters, outputs[rank],
                m_per_rank, n, dtype))
        else:
            engine.spawn(rank, "rs", _hier_reducer(
                engine, heap, ctx, rank, gemm_out, seg_ready, counters, scatter_buf,
                recv_sig, ring_sig, p2p_buf, p2p_sig, outputs[rank], m_per_rank, n,
                dtype, assume_full_mesh_links))
    trace = engine.run()
    return WorkloadRun(outputs, trace, heap, handles)


# -- producers ---------------------------------------------------------------------


def _producer(engine, heap, ctx, rank, sm, inp, weight, gemm_out, seg_ready, counters,
              m, n, k_local):
    topo = ctx.topology
    m_per_rank = m // topo.world_size
    num_pid_m, num_pid_n = cdiv(m, ctx.block_m), cdiv(n, ctx.block_n)
    tile_map = (gemm_rs_tile_map(m, rank, topo.world_size, topo.nnodes, ctx.block_m)
                if ctx.swizzle else None)
    out_view = heap.view(gemm_out, rank, inp.dtype, (m, n))
    for step in range(sm, num_pid_m * num_pid_n, ctx.num_gemm_sms):
        pid_m, pid_n = swizzle_2d(step, num_pid_m, num_pid_n, ctx.group_m)
        if tile_map is not None:
            pid_m = int(tile_map[pid_m])
        r0, r1 = pid_m * ctx.block_m, min((pid_m + 1) * ctx.block_m, m)
        c0, c1 = pid_n * ctx.block_n, min((pid_n + 1) * ctx.block_n, n)
        yield from engine.compute_tile(r1 - r0, c1 - c0, k_local, name="gemm_tile",
                                       tile=pid_m * num_pid_n + pid_n)
        out_view[r0:r1, c0:c1] = inp[r0:r1] @ weight[c0:c1].T
        seg0, seg1 = r0 // m_per_rank, (r1 - 1) // m_per_rank
        for seg in range(seg0, seg1 + 1):
            t0 = (m_per_rank * seg) // ctx.block_m
            t1 = (m_per_rank * (seg + 1) - 1) // ctx.block_m
            tiles_in_seg = t1 - t0 + 1
            val = heap.atomic_add(counters, seg, 1, pe=rank, semantic="release")
            if val == num_pid_n * tiles_in_seg - 1:
                heap.st(seg_ready, seg, 1, pe=rank, scope="gpu", semantic="release",
                        name="segment_ready")


def _producer_fused(engine, heap, ctx, rank, sm, inp, weight, fused, done, m, n, k_local):
    topo = ctx.topology
    world = topo.world_size
    m_per_rank = m // world
    num_pid_m, num_pid_n = cdiv(m, ctx.block_m), cdiv(n, ctx.block_n)
    tile_map = (gemm_rs_tile_map(m, rank, world, topo.nnodes, ctx.block_m)
                if ctx.swizzle else None)
    row_bytes = n * inp.dtype.itemsize
    for step in range(sm, num_pid_m * num_pid_n, ctx.num_gemm_sms):
        pid_m, pid_n = swizzle_2d(step, num_pid_m, num_pid_n, ctx.group_m)
        if tile_map is not None:
            pid_m = int(tile_map[pid_m])
        r0, r1 = pid_m * ctx.block_m, min((pid_m + 1) * ctx.block_m, m)
        c0, c1 = pid_n * ctx.block_n, min((pid_n + 1) * ctx.block_n, n)
        yield from engine.compute_tile(r1 - r0, c1 - c0, k_local, name="gemm_tile",
                                       tile=pid_m * num_pid_n + pid_n)
        tile = inp[r0:r1] @ weight[c0:c1].T
        # store each row slice straight into the owning rank's symmetric buffer,
        # at slot `rank` so the owner can reduce over source ranks afterwards
        for owner in range(r0 // m_per_rank, (r1 - 1) // m_per_rank + 1):
            o0 = max(m_per_rank * owner, r0)
            o1 = min(m_per_rank * (owner + 1), r1)
            dst_row = rank * m_per_rank + (o0 - m_per_rank * owner)
            dst_off = dst_row * row_bytes + c0 * inp.dtype.itemsize
            yield from heap.putmem_strided(heap.symm_at(fused, owner), dst_off,
                                           tile[o0 - r0:o1 - r0], row_bytes,
                                           from_pe=rank, note="fused_scatter")
    heap.atomic_add(done, 0, 1, pe=rank, semantic="release")


# -- consumers ---------------------------------------------------------------------


def _reset_signals(heap, rank, handles):
    # mirror of the paper-style post-run barrier teardown: every rank zeroes
    # its own copies once nobody can still be polling them
    for sig in handles:
        for idx in range(sig.nslots):
            if heap.ld(sig, idx, pe=rank) != 0:
                heap.st(sig, idx, 0, pe=rank, semantic="relaxed", name="reset")


def _flat_reducer(engine, heap, ctx, rank, gemm_out, seg_ready, counters, out,
                  m_per_rank, n, dtype):
    world = ctx.topology.world_size
    row_bytes = n * dtype.itemsize
    recv = np.empty((m_per_rank, n), dtype=dtype)
    acc = None
    for src in range(world):
        yield from heap.wait(seg_ready, rank, 1, pe=src, semantic="acquire", value=1,
                             note="segment_ready")
        yield from heap.getmem(recv, heap.symm_at(gemm_out, src),
                               rank * m_per_rank * row_bytes, from_pe=rank,
                               note="pull_partial")
        if acc is None:
            acc = recv.copy()
        else:
            yield from engine.compute(m_per_rank * n, name="reduce_rows")
            acc += recv
    out[:] = acc
    yield from heap.barrier_all(rank)
    _reset_signals(heap, rank, [seg_ready, counters])


def _hier_reducer(engine, heap, ctx, rank, gemm_out, seg_ready, counters, scatter_buf,
                  recv_sig, ring_sig, p2p_buf, p2p_sig, out, m_per_rank, n, dtype,
                  full_mesh):
    topo = ctx.topology
    lws, nnodes = topo.local_world_size, topo.nnodes
    node_id, local = rank // lws, rank % lws
    row_bytes = n * dtype.itemsize
    chunk_bytes = m_per_rank * row_bytes
    rows = heap.view(gemm_out, rank, dtype, (lws * nnodes * m_per_rank, n))
    for it in range(nnodes):
        cur = (node_id + it + 1) % nnodes
        if full_mesh or lws == 1:
            node_part = yield from _scatter_full_mesh(
                engine, heap, ctx, rank, it, cur, rows, seg_ready, scatter_buf,
                recv_sig, m_per_rank, n, dtype)
        else:
            node_part = yield from _scatter_ring(
                engine, heap, ctx, rank, it, cur, rows, seg_ready, scatter_buf,
                ring_sig, m_per_rank, n, dtype)
        # hand the node-partial of (cur, local)'s rows to its owner
        if cur == node_id:
            heap.view(p2p_buf, rank, dtype, (nnodes * m_per_rank, n))[
                node_id * m_per_rank:(node_id + 1) * m_per_rank] = node_part
            heap.st(p2p_sig, node_id, 1, pe=rank, semantic="release", name="p2p_ready")
        else:
            owner = cur * lws + local
            yield from heap.putmem(heap.symm_at(p2p_buf, owner), node_id * chunk_bytes,
                                   node_part, from_pe=rank, note="p2p_node_partial")
            heap.notify(p2p_sig, node_id, pe=owner, value=1)
    yield from heap.wait(p2p_sig, 0, nnodes, pe=rank, semantic="acquire", value=1,
                         note="p2p_ready")
    slots = heap.view(p2p_buf, rank, dtype, (nnodes * m_per_rank, n))
    order = reduce_visit_order(node_id, nnodes, ctx.reduce_order)
    acc = slots[order[0] * m_per_rank:(order[0] + 1) * m_per_rank].copy()
    for j in order[1:]:
        yield from engine.compute(m_per_rank * n, name="reduce_inter")
        acc += slots[j * m_per_rank:(j + 1) * m_per_rank]
    out[:] = acc
    yield from heap.barrier_all(rank)
    _reset_signals(heap, rank, [seg_ready, counters, recv_sig, ring_sig, p2p_sig])


def _scatter_full_mesh(engine, heap, ctx, rank, it, cur, rows, seg_ready, scatter_buf,
                       recv_sig, m_per_rank, n, dtype):
    """Push my partial of each local peer's chunk, then reduce what I received."""
    topo = ctx.topology
    lws = topo.local_world_size
    node_id, local = rank // lws, rank % lws
    chunk_bytes = m_per_rank * n * dtype.itemsize
    for j in range(lws):
        dst_local = (local + j + 1) % lws
        dst_rank = node_id * lws + dst_local
        seg = cur * lws + dst_local
        yield from heap.wait(seg_ready, seg, 1, pe=rank, semantic="acquire", value=1,
                             note="segment_ready")
        piece = np.ascontiguousarray(rows[seg * m_per_rank:(seg + 1) * m_per_rank])
        slot = it * lws + local
        yield from heap.putmem(heap.symm_at(scatter_buf, dst_rank), slot * chunk_bytes,
                               piece, from_pe=rank, note="scatter_push")
        heap.notify(recv_sig, slot, pe=dst_rank, value=1)
    yield from heap.wait(recv_sig, it * lws, lws, pe=rank, semantic="acquire", value=1,
                         note="scatter_recv")
    slots = heap.view(scatter_buf, rank, dtype,
                      (ctx.topology.nnodes * lws * m_per_rank, n))
    order = reduce_visit_order(local, lws, ctx.reduce_order)
    base = it * lws
    acc = slots[(base + order[0]) * m_per_rank:(base + order[0] + 1) * m_per_rank].copy()
    for j in order[1:]:
        yield from engine.compute(m_per_rank * n, name="reduce_intra")
        acc += slots[(base + j) * m_per_rank:(base + j + 1) * m_per_rank]
    return acc


def _scatter_ring(engine, heap, ctx, rank, it, cur, rows, seg_ready, scatter_buf,
                  ring_sig, m_per_rank, n, dtype):
    """Neighbor-ring reduce-scatter of node `cur`'s rows inside my node.

    Chunk c starts at local rank c+1 and travels the ring accumulating each
    holder's contribution; after lws-1 hops local rank l holds chunk l.
    """
    topo = ctx.topology
    lws = topo.local_world_size
    node_id, local = rank // lws, rank % lws
    nxt = node_id * lws + (local + 1) % lws
    chunk_bytes = m_per_rank * n * dtype.itemsize
    recv_view = heap.view(scatter_buf, rank, dtype,
                          (topo.nnodes * lws * m_per_rank, n))

    def my_rows(chunk):
        seg = cur * lws + chunk
        return rows[seg * m_per_rank:(seg + 1) * m_per_rank]

    if lws == 1:
        seg = cur * lws + local
        yield from heap.wait(seg_ready, seg, 1, pe=rank, semantic="acquire", value=1,
                             note="segment_ready")
        return my_rows(local).copy()

    acc = None
    for s in range(lws - 1):
        slot = it * lws + s  # fresh landing slot per hop; no reuse races
        send_chunk = (local - 1 - s) % lws
        if s == 0:
            seg = cur * lws + send_chunk
            yield from heap.wait(seg_ready, seg, 1, pe=rank, semantic="acquire",
                                 value=1, note="segment_ready")
            payload = np.ascontiguousarray(my_rows(send_chunk))
        else:
            payload = acc
        yield from heap.putmem(heap.symm_at(scatter_buf, nxt), slot * chunk_bytes,
                               payload, from_pe=rank, note="ring_push")
        heap.notify(ring_sig, it * (lws - 1) + s, pe=nxt, value=1)
        yield from heap.wait(ring_sig, it * (lws - 1) + s, 1, pe=rank,
                             semantic="acquire", value=1, note="ring_recv")
        recv_chunk = (local - 2 - s) % lws
        seg = cur * lws + recv_chunk
        yield from heap.wait(seg_ready, seg, 1, pe=rank, semantic="acquire", value=1,
                             note="segment_ready")
        yield from engine.compute(m_per_rank * n, name="reduce_ring")
        acc = recv_view[slot * m_per_rank:(slot + 1) * m_per_rank] + my_rows(recv_chunk)
    return acc


# -- fused path ---------------------------------------------------------------------


def _fused_reducer(engine, heap, ctx, rank, fused, done, out, m_per_rank, n, dtype):
    world = ctx.topology.world_size
    yield from heap.wait(done, 0, 1, pe=rank, semantic="acquire",
                         value=ctx.num_gemm_sms, note="producers_done")
    yield from heap.barrier_all(rank)
    slots = heap.view(fused, rank, dtype, (world * m_per_rank, n))
    order = reduce_visit_order(rank, world, ctx.reduce_order)
    acc = slots[order[0] * m_per_rank:(order[0] + 1) * m_per_rank].copy()
    for j in order[1:]:
        yield from engine.compute(m_per_rank * n, name="reduce_local")
        acc += slots[j * m_per_rank:(j + 1) * m_per_rank]
    out[:] = acc
    yield from heap.barrier_all(rank)
    _reset_signals(heap, rank, [done])
