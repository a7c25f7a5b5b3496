"""Shared run configuration and result bundle for the overlapped workloads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..simengine import Trace
from ..topology import Topology

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.int64))

REDUCE_ORDERS = ("ring", "ascending")


@dataclass
class WorkloadContext:
    """Tuning and mode flags for one workload family.

    num_gemm_sms compute workers and num_comm_sms communication workers are
    spawned per rank (plus one pull/scatter engine where the protocol needs
    it); their sum must fit the topology's virtual SM budget.

    reduce_order picks the cross-rank reduction: "ascending" is the flat
    deterministic order (rank 0 -> world-1, bitwise-comparable to the
    references), "ring" is the staggered realistic order.
    """

    topology: Topology
    block_m: int = 16
    block_n: int = 16
    block_k: int = 16
    group_m: int = 4
    num_gemm_sms: int = 2
    num_comm_sms: int = 1
    fuse_scatter: bool = False
    use_multimem_st: bool = False
    swizzle: bool = True
    reduce_order: str = "ring"
    seed: int = 0

    def __post_init__(self):
        if min(self.block_m, self.block_n, self.block_k, self.group_m) < 1:
            raise ConfigError("block and group sizes must be >= 1")
        if self.num_gemm_sms < 1 or self.num_comm_sms < 1:
            raise ConfigError("need at least one compute and one comm worker per rank")
        if self.num_gemm_sms + self.num_comm_sms > self.topology.num_sms:
            raise ConfigError(
                f"{self.num_gemm_sms}+{self.num_comm_sms} workers exceed "
                f"{self.topology.num_sms} virtual SMs per rank")
        if self.reduce_order not in REDUCE_ORDERS:
            raise ConfigError(f"reduce_order must be one of {REDUCE_ORDERS}")


@dataclass
class WorkloadRun:
    """Outputs plus everything needed to inspect the run afterwards."""

    outputs: list
    trace: Trace
    heap: object
    handles: dict = field(default_factory=dict)


def check_dtype(*arrays) -> np.dtype:
    dt = arrays[0].dtype
    if np.dtype(dt) not in SUPPORTED_DTYPES:
        raise ValueError(f"unsupported dtype {dt}; use float32 or int64 (exact mode)")
    for a in arrays[1:]:
        if a.dtype != dt:
            raise ValueError(f"mixed dtypes: {dt} vs {a.dtype}")
    return np.dtype(dt)


def reduce_visit_order(begin: int, n: int, order: str) -> list[int]:
    """Chunk visit order for reductions: flat ascending or ring from begin+1."""
    if order == "ascending":
        return list(range(n))
    return [(begin + 1 + i) % n for i in range(n)]
