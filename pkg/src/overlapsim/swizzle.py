"""Tile-order permutations that make data dependencies arrive just in time.

Two static modes plus a dynamic expert-routed schedule:
 - gather mode (allgather + GEMM): start each rank at its own, already-local
   rows so remote chunks stream in behind the compute front;
 - scatter mode (GEMM + reduce-scatter): start each rank at the rows owned by
   its successor so results destined for remote ranks leave earliest.

Cross-node boundary tiles (imperfect tiling) are assigned to exactly one
node's range: the last-visited node in gather mode (all contributing chunks
have arrived by then) and the first-visited node in scatter mode (multiple
consumers need them, so they are computed first). All maps are bijections.

Everything here is a pure function; warp-level primitives from the GPU
formulation are replaced by ordinary array arithmetic with equal semantics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def cdiv(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class SwizzleParams:
    """Shape and launch parameters shared by the static swizzles."""

    m: int
    n: int
    k: int
    block_size_m: int
    block_size_n: int
    block_size_k: int
    group_size_m: int
    rank: int
    world_size: int
    nnodes: int = 1

    def __post_init__(self):
        if self.world_size < 1 or self.nnodes < 1:
            raise ValueError("world_size and nnodes must be >= 1")
        if self.m % self.world_size != 0:
            raise ValueError(f"M={self.m} must divide evenly across {self.world_size} ranks")
        if self.world_size % self.nnodes != 0:
            raise ValueError(f"world_size {self.world_size} not divisible by nnodes {self.nnodes}")
        if not 0 <= self.rank < self.world_size:
            raise ValueError(f"rank {self.rank} out of range")
        if min(self.block_size_m, self.block_size_n, self.block_size_k, self.group_size_m) < 1:
            raise ValueError("block and group sizes must be >= 1")

    @property
    def m_per_rank(self) -> int:
        return self.m // self.world_size

    @property
    def m_per_node(self) -> int:
        return self.m // self.nnodes

    @property
    def num_pid_m(self) -> int:
        return cdiv(self.m, self.block_size_m)

    @property
    def num_pid_n(self) -> int:
        return cdiv(self.n, self.block_size_n)


# -- grouped launch order -------------------------------------------------------


def swizzle_2d(pid: int, num_pid_m: int, num_pid_n: int, group_size_m: int) -> tuple[int, int]:
    """Grouped row-major mapping of a linear tile id to (pid_m, pid_n)."""
    if group_size_m < 1:
        raise ValueError("group_size_m must be >= 1")
    if not 0 <= pid < num_pid_m * num_pid_n:
        raise ValueError(f"pid {pid} out of range [0, {num_pid_m * num_pid_n})")
    num_pid_in_group = group_size_m * num_pid_n
    group_id = pid // num_pid_in_group
    first_pid_m = group_id * group_size_m
    group_size = min(num_pid_m - first_pid_m, group_size_m)
    pid_m = first_pid_m + (pid % num_pid_in_group) % group_size
    pid_n = (pid % num_pid_in_group) // group_size
    return pid_m, pid_n


# -- single-node rotations ------------------------------------------------------


def swizzle_ag_gemm_intranode(pid_m: int, params: SwizzleParams) -> int:
    """Gather-mode rotation: step 0 lands on the rank's own row chunk."""
    offset = cdiv(params.rank * params.m_per_rank, params.block_size_m)
    return (pid_m + offset) % params.num_pid_m


def swizzle_gemm_rs_intranode(pid_m: int, params: SwizzleParams) -> int:
    """Scatter-mode rotation: step 0 lands on the successor rank's rows."""
    offset = ((params.rank + 1) * params.m_per_rank) // params.block_size_m
    return (pid_m + offset) % params.num_pid_m


# -- multi-node maps -------------------------------------------------------------


def _visit_ranges(m: int, block_m: int, nnodes: int, node_start: int, mode: str):
    """Adjusted inclusive tile ranges per node, in visiting order.

    A tile straddling two nodes' rows is kept by exactly one of them; the
    shrink rules below pick the last-visited node in gather mode and the
    first-visited node in scatter mode.
    """
    m_per_node = m // nnodes
    ranges = []
    for lane in range(nnodes):
        nid = (lane + node_start) % nnodes
        m_node_start = m_per_node * nid
        m_node_end = m_per_node * (nid + 1)
        start = m_node_start // block_m
        prev_end = (m_node_start - 1) // block_m
        end = (m_node_end - 1) // block_m
        next_start = m_node_end // block_m
        if mode == "ag_gemm":
            if lane == 0 and m_node_start != 0 and prev_end == start:
                start += 1
            if lane == 0 and m_node_end != m and next_start == end:
                end -= 1
            if lane != nnodes - 1 and m_node_end != m and next_start == end:
                end -= 1
        elif mode == "gemm_rs":
            if lane != 0 and m_node_start != 0 and prev_end == start:
                start += 1
            if lane == nnodes - 1 and m_node_end != m and next_start == end:
                end -= 1
        else:
            raise ValueError(f"unknown swizzle mode {mode!r}")
        ranges.append((nid, start, end))
    return ranges


def _internode_map(m: int, rank: int, world_size: int, nnodes: int, block_m: int,
                   mode: str) -> np.ndarray:
    if world_size % nnodes != 0:
        raise ValueError(f"world_size {world_size} not divisible by nnodes {nnodes}")
    if m % world_size != 0:
        raise ValueError(f"M={m} must divide evenly across {world_size} ranks")
    local_world_size = world_size // nnodes
    node_id = rank // local_world_size
    local_rank = rank % local_world_size
    m_per_rank = m // world_size
    m_per_node = m // nnodes
    num_pid_m = cdiv(m, block_m)
    node_start = node_id if mode == "ag_gemm" else node_id + 1

    out = np.empty(num_pid_m, dtype=np.int64)
    pos = 0
    for nid, start, end in _visit_ranges(m, block_m, nnodes, node_start, mode):
        size = end - start + 1
        if size <= 0:
            continue
        if mode == "ag_gemm":
            m_start = m_per_node * nid + m_per_rank * local_rank
            tiled_m_start = cdiv(m_start, block_m)
        else:
            m_start = m_per_node * nid + m_per_rank * (local_rank + 1)
            tiled_m_start = m_start // block_m
        rank_offset = max(0, tiled_m_start - start)  # may go negative at node edges; clamp
        idx = np.arange(size, dtype=np.int64)
        out[pos:pos + size] = start + (idx + rank_offset) % size
        pos += size
    assert pos == num_pid_m, "node tile ranges must partition the tile space"
    return out


def ag_gemm_tile_map(m: int, rank: int, world_size: int, nnodes: int, block_m: int) -> np.ndarray:
    """Full gather-mode permutation: entry j is the tile computed at step j."""
    return _internode_map(m, rank, world_size, nnodes, block_m, "ag_gemm")


def gemm_rs_tile_map(m: int, rank: int, world_size: int, nnodes: int, block_m: int) -> np.ndarray:
    """Full scatter-mode permutation: entry j is the tile computed at step j."""
    return _internode_map(m, rank, world_size, nnodes, block_m, "gemm_rs")


def swizzle_ag_gemm_internode(tiled_m: int, m: int, rank: int, world_size: int,
                              nnodes: int, block_size_m: int) -> int:
    mapping = ag_gemm_tile_map(m, rank, world_size, nnodes, block_size_m)
    if not 0 <= tiled_m < mapping.size:
        raise ValueError(f"tiled_m {tiled_m} out of range [0, {mapping.size})")
    return int(mapping[tiled_m])


def swizzle_gemm_rs_internode(tiled_m: int, m: int, rank: int, world_size: int,
                              nnodes: int, block_size_m: int) -> int:
    mapping = gemm_rs_tile_map(m, rank, world_size, nnodes, block_size_m)
    if not 0 <= tiled_m < mapping.size:
        raise ValueError(f"tiled_m {tiled_m} out of range [0, {mapping.size})")
    return int(mapping[tiled_m])


# -- expert-routed schedule -------------------------------------------------------


@dataclass(frozen=True)
class MoeSchedule:
    """Tile execution order for the gathered, expert-sorted token matrix.

    Slot arrays are grouped by expert, then by non-decreasing arrival stage
    within each expert; ties keep the original tile order. tiled_m is a
    permutation of range(ntiles); [segment_start, segment_end] is the source
    rank range whose token chunks the tile's rows require.
    """

    expert_id: np.ndarray
    tiled_m: np.ndarray
    segment_start: np.ndarray
    segment_end: np.ndarray
    stage: np.ndarray
    ntiles: int


def swizzle_ag_moe(ntokens_by_rank_by_expert, rank: int, n_experts: int, tp_size: int,
                   local_tp_size: int, block_size_m: int) -> MoeSchedule:
    """Build the dynamic tile schedule for allgather + grouped GEMM.

    Within each expert, tokens are laid out by source rank (rank 0 first).
    A tile's stage is the pull-order arrival step of the furthest chunk it
    needs, i.e. max over covering ranks s of (s - rank) % tp_size, matching a
    full-mesh pull that fetches (rank + i) % tp_size at step i.
    """
    counts = np.asarray(ntokens_by_rank_by_expert, dtype=np.int64)
    if counts.shape != (tp_size, n_experts):
        raise ValueError(f"token matrix must be [{tp_size}, {n_experts}], got {counts.shape}")
    if np.any(counts < 0):
        raise ValueError("token counts must be >= 0")
    if tp_size < 1 or local_tp_size < 1 or tp_size % local_tp_size != 0:
        raise ValueError(f"tp_size {tp_size} must be a multiple of local_tp_size {local_tp_size}")
    if not 0 <= rank < tp_size:
        raise ValueError(f"rank {rank} out of range")
    if block_size_m < 1:
        raise ValueError("block_size_m must be >= 1")

    tokens_by_expert_by_rank = counts.T  # [E, tp]
    token_cumsum = np.cumsum(tokens_by_expert_by_rank, axis=1)
    tokens_per_expert = token_cumsum[:, -1] if n_experts else np.zeros(0, np.int64)
    ntiles_by_expert = -(-tokens_per_expert // block_size_m)
    tile_acc = np.cumsum(ntiles_by_expert)
    ntiles = int(tile_acc[-1]) if n_experts else 0
    empty = np.zeros(0, dtype=np.int64)
    if ntiles == 0:
        return MoeSchedule(empty, empty, empty, empty, empty, 0)

    tile_index = np.arange(ntiles, dtype=np.int64)
    expert_id = np.searchsorted(tile_acc, tile_index, side="right")
    tile_base = tile_acc - ntiles_by_expert
    off_in_expert = tile_index - tile_base[expert_id]

    row0 = off_in_expert * block_size_m
    row1 = np.minimum(row0 + block_size_m, tokens_per_expert[expert_id])
    segment_start = np.empty(ntiles, dtype=np.int64)
    segment_end = np.empty(ntiles, dtype=np.int64)
    for e in range(n_experts):
        sel = expert_id == e
        if not np.any(sel):
            continue
        segment_start[sel] = np.searchsorted(token_cumsum[e], row0[sel], side="right")
        segment_end[sel] = np.searchsorted(token_cumsum[e], row1[sel] - 1, side="right")

    # arrival step of rank s under the full-mesh pull order
    stage = np.zeros(ntiles, dtype=np.int64)
    for i in range(ntiles):
        seg = np.arange(segment_start[i], segment_end[i] + 1)
        stage[i] = int(np.max((seg - rank) % tp_size))

    order = np.lexsort((tile_index, stage, expert_id))
    return MoeSchedule(
        expert_id=expert_id[order],
        tiled_m=tile_index[order],
        segment_start=segment_start[order],
        segment_end=segment_end[order],
        stage=stage[order],
        ntiles=ntiles,
    )


# -- text rendering ----------------------------------------------------------------

MAX_RENDER_CELLS = 200_000


def render_swizzle_map(params: SwizzleParams, mode: str) -> str:
    """One text row per rank; column j is the tile id executed at step j.

    Tiles whose rows span more than one rank's output chunk carry a '*'.
    Output is stable across runs, so it can be golden-file tested.
    """
    if mode not in ("ag_gemm", "gemm_rs"):
        raise ValueError(f"unknown swizzle mode {mode!r}")
    num_pid_m = params.num_pid_m
    if num_pid_m * params.world_size > MAX_RENDER_CELLS:
        raise ValueError("grid too large to render as text")
    map_fn = ag_gemm_tile_map if mode == "ag_gemm" else gemm_rs_tile_map

    def straddles(tile: int) -> bool:
        first = (tile * params.block_size_m) // params.m_per_rank
        last = (min((tile + 1) * params.block_size_m, params.m) - 1) // params.m_per_rank
        return first != last

    any_cross = any(straddles(t) for t in range(num_pid_m))
    width = len(str(num_pid_m - 1)) + (1 if any_cross else 0)
    rows = []
    for r in range(params.world_size):
        mapping = map_fn(params.m, r, params.world_size, params.nnodes, params.block_size_m)
        cells = []
        for tile in mapping:
            text = f"{int(tile)}*" if straddles(int(tile)) else str(int(tile))
            cells.append(text.rjust(width))
        rows.append(" ".join(cells).rstrip())
    return "\n".join(rows)
