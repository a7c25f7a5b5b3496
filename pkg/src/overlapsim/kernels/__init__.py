from .ag_gemm import ag_gemm
from .ag_moe import ag_moe_group_gemm
from .context import WorkloadContext, WorkloadRun
from .gemm_ar import gemm_allreduce
from .gemm_rs import gemm_rs
from .oracles import (
    gather_tokens_by_expert,
    ref_allgather_gemm,
    ref_allreduce,
    ref_group_gemm,
    ref_reduce_scatter,
)

__all__ = [
    "WorkloadContext",
    "WorkloadRun",
    "ag_gemm",
    "ag_moe_group_gemm",
    "gemm_allreduce",
    "gemm_rs",
    "gather_tokens_by_expert",
    "ref_allgather_gemm",
    "ref_allreduce",
    "ref_group_gemm",
    "ref_reduce_scatter",
]
