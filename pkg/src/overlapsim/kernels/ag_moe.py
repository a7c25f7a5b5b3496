"""Overlapped allgather + grouped GEMM for expert-routed tokens.

Each rank's local tokens are pre-sorted by expert; chunks are gathered
rank-major with one arrival signal per source. Compute workers follow the
dynamic schedule (grouped by expert, then by arrival stage), waiting only on
the source-rank segment a tile's rows actually need, then multiply against
the rank's expert weight shards. Output rows are expert-major.
"""

from __future__ import annotations

import numpy as np

from ..shmem import SymmetricHeap
from ..simengine import Engine
from ..swizzle import cdiv, swizzle_ag_moe
from .context import WorkloadContext, WorkloadRun, check_dtype


def ag_moe_group_gemm(token_shards, expert_weights, routing, ctx: WorkloadContext) -> WorkloadRun:
    """Returns per-rank grouped-GEMM outputs [total_tokens, N_per_rank].

    token_shards[r]: [rows_r, K] with rows grouped by expert;
    expert_weights[r]: sequence of per-expert [N_per_rank, K] weight shards;
    routing: [world, n_experts] token counts (rows_r == routing[r].sum()).
    """
    topo = ctx.topology
    world = topo.world_size
    routing = np.asarray(routing, dtype=np.int64)
    if routing.ndim != 2 or routing.shape[0] != world:
        raise ValueError(f"routing must be [world={world}, n_experts], got {routing.shape}")
    if np.any(routing < 0):
        raise ValueError("routing counts must be >= 0")
    n_experts = routing.shape[1]
    if len(token_shards) != world or len(expert_weights) != world:
        raise ValueError(f"need {world} token shards and weight sets")
    weights0 = expert_weights[0]
    if len(weights0) != n_experts:
        raise ValueError(f"need {n_experts} weight shards per rank")
    dtype = check_dtype(*token_shards, *[w for ws_ in expert_weights for w in ws_])
    k = token_shards[0].shape[1]
    n_per_rank = weights0[0].shape[0]
    for r in range(world):
        if token_shards[r].shape != (int(routing[r].sum()), k):
            raise ValueError(f"rank {r} token shard {token_shards[r].shape} inconsistent "
                             f"with routing sum {int(routing[r].sum())}")
        for w in expert_weights[r]:
            if w.shape != (n_per_rank, k):
                raise ValueError("ragged expert weights")

    rows_by_rank = routing.sum(axis=1)
    chunk_base = np.concatenate([[0], np.cumsum(rows_by_rank)])
    total_rows = int(chunk_base[-1])
    tokens_per_expert = routing.sum(axis=0)
    expert_base = np.concatenate([[0], np.cumsum(tokens_per_expert)])
    # rank-major workspace offsets: expert e's piece inside rank r's chunk
    in_rank_base = np.concatenate(
        [np.zeros((world, 1), dtype=np.int64), np.cumsum(routing, axis=1)], axis=1)
    rank_cum = np.concatenate(
        [np.zeros((1, n_experts), dtype=np.int64), np.cumsum(routing, axis=0)], axis=0)

    engine = Engine(topo, seed=ctx.seed)
    heap = SymmetricHeap(topo, engine,
                         data_bytes=max(total_rows, 1) * k * dtype.itemsize + 4096,
                         signal_slots=world + 16)
    workspace = heap.alloc(total_rows * k * dtype.itemsize)
    arrival = heap.alloc_signals(world)
    outputs = [np.zeros((total_rows, n_per_rank), dtype=dtype) for _ in range(world)]

    for rank in range(world):
        schedule = swizzle_ag_moe(routing, rank, n_experts, world,
                                  topo.local_world_size, ctx.block_m)
        if not ctx.swizzle:
            schedule = _identity_order(schedule)
        engine.spawn(rank, "pull", _pull_engine(
            engine, heap, rank, token_shards[rank], workspace, arrival,
            chunk_base, k, dtype))
        for sm in range(ctx.num_gemm_sms):
            engine.spawn(rank, f"gemm{sm}", _group_gemm_worker(
                engine, heap, ctx, rank, sm, schedule, expert_weights[rank],
                workspace, arrival, outputs[rank],
                chunk_base, in_rank_base, rank_cum, expert_base,
                tokens_per_expert, k, n_per_rank, dtype))
    trace = engine.run()
    return WorkloadRun(outputs, trace, heap, {"workspace": workspace, "arrival": arrival})


def _identity_order(schedule):
    """Naive baseline: run tiles in original index order (no stage regrouping)."""
    from ..swizzle import MoeSchedule
    order = np.argsort(schedule.tiled_m, kind="stable")
    return MoeSchedule(
        expert_id=schedule.expert_id[order], tiled_m=schedule.tiled_m[order],
        segment_start=schedule.segment_start[order],
        segment_end=schedule.segment_end[order], stage=schedule.stage[order],
        ntiles=schedule.ntiles)


def _pull_engine(engine, heap, rank, tokens, workspace, arrival, chunk_base, k, dtype):
    world = engine.topology.world_size
    row_bytes = k * dtype.itemsize
    if tokens.size:
        yield from heap.putmem(heap.symm_at(workspace, rank),
                               int(chunk_base[rank]) * row_bytes, tokens,
                               from_pe=rank, note="local_copy")
    heap.st(arrival, rank, 1, pe=rank, semantic="release", name="chunk_ready")
    yield from heap.barrier_all(rank)
    own = heap.view(workspace, rank, dtype)
    for i in range(1, world):
        src = (rank + i) % world
        lo, hi = int(chunk_base[src]) * k, int(chunk_base[src + 1]) * k
        if hi > lo:
            yield from heap.getmem(own[lo:hi], heap.symm_at(workspace, src),
                                   lo * dtype.itemsize, from_pe=rank, note="pull_chunk")
        heap.notify(arrival, src, pe=rank, value=1)


def _group_gemm_worker(engine, heap, ctx, rank, sm, schedule, weights, workspace,
                       arrival, out, chunk_base, in_rank_base, rank_cum, expert_base,
                       tokens_per_expert, k, n_per_rank, dtype):
    num_pid_n = cdiv(n_per_rank, ctx.block_n)
    total_steps = schedule.ntiles * num_pid_n
    gathered = heap.view(workspace, rank, dtype, (int(chunk_base[-1]), k))
    ntiles_by_expert = -(-tokens_per_expert // ctx.block_m)
    tile_base = np.concatenate([[0], np.cumsum(ntiles_by_expert)])
    for step in range(sm, total_steps, ctx.num_gemm_sms):
        slot, pid_n = step // num_pid_n, step % num_pid_n
        expert = int(schedule.expert_id[slot])
        seg0 = int(schedule.segment_start[slot])
        seg1 = int(schedule.segment_end[slot])
        tile_in_expert = int(schedule.tiled_m[slot]) - int(tile_base[expert])
        row0 = tile_in_expert * ctx.block_m
        row1 = min(row0 + ctx.block_m, int(tokens_per_expert[expert]))
        c0, c1 = pid_n * ctx.block_n, min((pid_n + 1) * ctx.block_n, n_per_rank)
        yield from heap.wait(arrival, seg0, seg1 - seg0 + 1, pe=rank,
                             semantic="acquire", value=1, note="wait_chunks")
        tile = _gather_rows(gathered, rank_cum, in_rank_base, chunk_base,
                            expert, row0, row1, k, dtype)
        yield from engine.compute_tile(row1 - row0, c1 - c0, k, name="moe_tile",
                                       tile=int(schedule.tiled_m[slot]))
        base = int(expert_base[expert])
        out[base + row0:base + row1, c0:c1] = tile @ weights[expert][c0:c1].T


def _gather_rows(gathered, rank_cum, in_rank_base, chunk_base, expert, row0, row1, k, dtype):
    """Collect expert-major rows [row0, row1) of `expert` from rank-major chunks."""
    world = rank_cum.shape[0] - 1
    tile = np.empty((row1 - row0, k), dtype=dtype)
    filled = 0
    for w in range(world):
        lo = max(row0, int(rank_cum[w, expert]))
        hi = min(row1, int(rank_cum[w + 1, expert]))
        if hi <= lo:
            continue
        ws_row = int(chunk_base[w]) + int(in_rank_base[w, expert]) + (lo - int(rank_cum[w, expert]))
        tile[filled:filled + hi - lo] = gathered[ws_row:ws_row + hi - lo]
        filled += hi - lo
    assert filled == row1 - row0, "tile rows must be fully covered by source chunks"
    return tile
