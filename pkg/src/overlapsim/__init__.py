"""Desk-scale simulator for overlapped distributed tensor workloads.

Virtual ranks run on a deterministic discrete-event engine over simulated
symmetric memory; tile-swizzle scheduling, the overlapped workload protocols,
and a scoreboard-driven fused-graph executor sit on top, each checked against
sequential references.
"""

from .simengine import (
    CostModel,
    DeadlockError,
    Engine,
    Trace,
    TraceEvent,
    export_chrome_trace,
    format_overlap_report,
    makespan,
    overlap_report,
    run_simulation,
)
from .shmem import SymmetricHeap, Token, consume_token
from .topology import (
    LINK_PROFILES,
    LinkConfig,
    Topology,
    build_topology,
    local_rank_of,
    node_of,
    topology_from_config,
)

__version__ = "0.1.0"

__all__ = [
    "CostModel", "DeadlockError", "Engine", "Trace", "TraceEvent",
    "export_chrome_trace", "format_overlap_report", "makespan",
    "overlap_report", "run_simulation",
    "SymmetricHeap", "Token", "consume_token",
    "LINK_PROFILES", "LinkConfig", "Topology", "build_topology",
    "local_rank_of", "node_of", "topology_from_config",
    "__version__",
]
