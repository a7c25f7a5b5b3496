"""Sequential references for the overlapped workloads.

Single-threaded, fixed evaluation order (rank 0 through world-1). These stay
independent of the overlapped implementations; tests compare the two routes.
"""

from __future__ import annotations

import numpy as np


def ref_allgather_gemm(a_shards, b_shards) -> list[np.ndarray]:
    """Per rank r: concat(a_0..a_{w-1}) @ b_r.T."""
    gathered = np.concatenate(list(a_shards), axis=0)
    return [gathered @ b.T for b in b_shards]


def ref_reduce_scatter(input_shards, weight_shards) -> list[np.ndarray]:
    """Sum per-rank partials input_r @ weight_r.T in rank order, slice chunk r."""
    world = len(input_shards)
    total = input_shards[0] @ weight_shards[0].T
    for r in range(1, world):
        total = total + input_shards[r] @ weight_shards[r].T
    m_per_rank = total.shape[0] // world
    if total.shape[0] % world != 0:
        raise ValueError(f"M={total.shape[0]} not divisible by world {world}")
    return [total[r * m_per_rank:(r + 1) * m_per_rank].copy() for r in range(world)]


def ref_allreduce(a_shards, b_shards) -> np.ndarray:
    """Sum of per-rank a_r @ b_r.T in rank order; identical on every rank."""
    total = a_shards[0] @ b_shards[0].T
    for r in range(1, len(a_shards)):
        total = total + a_shards[r] @ b_shards[r].T
    return total


def gather_tokens_by_expert(token_shards, routing) -> np.ndarray:
    """Concatenate token rows grouped by (expert, source rank)."""
    routing = np.asarray(routing)
    world, n_experts = routing.shape
    rank_expert_base = np.concatenate(
        [np.zeros((world, 1), dtype=np.int64), np.cumsum(routing, axis=1)], axis=1)
    pieces = []
    for e in range(n_experts):
        for r in range(world):
            lo = rank_expert_base[r, e]
            hi = rank_expert_base[r, e + 1]
            pieces.append(token_shards[r][lo:hi])
    return np.concatenate(pieces, axis=0)


def ref_group_gemm(token_shards, expert_weights, routing) -> list[np.ndarray]:
    """Per rank r: expert-sorted gathered tokens times rank r's weight shard."""
    routing = np.asarray(routing)
    n_experts = routing.shape[1]
    gathered = gather_tokens_by_expert(token_shards, routing)
    tokens_per_expert = routing.sum(axis=0)
    bounds = np.concatenate([[0], np.cumsum(tokens_per_expert)])
    outs = []
    for weights in expert_weights:
        n_cols = weights[0].shape[0]
        out = np.zeros((gathered.shape[0], n_cols), dtype=gathered.dtype)
        for e in range(n_experts):
            lo, hi = bounds[e], bounds[e + 1]
            if hi > lo:
                out[lo:hi] = gathered[lo:hi] @ weights[e].T
        outs.append(out)
    return outs
