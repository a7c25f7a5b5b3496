"""Cluster shape: ranks, nodes, and per-domain link parameters.

A Topology is immutable and shared by every simulated worker. Bandwidths are
bytes/sec, latencies seconds, flops_rate flop/sec per virtual SM.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import load_config
from .errors import ConfigError

# Default link profiles. "h800": NVLink 200 GB/s uni-directional per rank,
# 50 GB/s per rank across nodes. "hopper96": 450 GB/s NVLink, 25 GB/s
# cross-node. Latencies are simulator defaults (1 us intra, 5 us inter),
# not measured values; override them per run if you care.
LINK_PROFILES: dict[str, "LinkConfig"] = {}


@dataclass(frozen=True)
class LinkConfig:
    intra_node_bw: float
    inter_node_bw: float
    intra_node_lat: float = 1e-6
    inter_node_lat: float = 5e-6
    nics_per_node: int = 8


LINK_PROFILES["h800"] = LinkConfig(intra_node_bw=200e9, inter_node_bw=50e9, nics_per_node=8)
LINK_PROFILES["hopper96"] = LinkConfig(intra_node_bw=450e9, inter_node_bw=25e9, nics_per_node=4)

DEFAULT_PROFILE = "h800"
DEFAULT_FLOPS_RATE = 1e12  # flop/sec per virtual SM; tune per scenario
DEFAULT_NUM_SMS = 8


@dataclass(frozen=True)
class Topology:
    world_size: int
    nnodes: int
    local_world_size: int
    intra_node_bw: float
    inter_node_bw: float
    intra_node_lat: float
    inter_node_lat: float
    flops_rate: float
    num_sms: int
    nics_per_node: int = 8  # informational only

    def __post_init__(self):
        if self.world_size < 1 or self.nnodes < 1:
            raise ConfigError(f"need at least 1 rank and 1 node, got {self.world_size}/{self.nnodes}")
        if self.world_size % self.nnodes != 0:
            raise ConfigError(f"world_size {self.world_size} not divisible by nnodes {self.nnodes}")
        if self.local_world_size != self.world_size // self.nnodes:
            raise ConfigError("local_world_size must equal world_size // nnodes")
        for name in ("intra_node_bw", "inter_node_bw", "flops_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be strictly positive")
        if self.intra_node_lat < 0 or self.inter_node_lat < 0:
            raise ConfigError("latencies must be non-negative")
        if self.num_sms < 1:
            raise ConfigError("need at least one virtual SM per rank")


def build_topology(world_size: int, nnodes: int, link_config: LinkConfig | None = None, *,
                   flops_rate: float = DEFAULT_FLOPS_RATE, num_sms: int = DEFAULT_NUM_SMS) -> Topology:
    """Validate and build a Topology. `link_config` defaults to the h800 profile."""
    link = link_config or LINK_PROFILES[DEFAULT_PROFILE]
    if world_size < 1:
        raise ConfigError(f"world_size must be >= 1, got {world_size}")
    if nnodes < 1 or world_size % nnodes != 0:
        raise ConfigError(f"world_size {world_size} not divisible by nnodes {nnodes}")
    return Topology(
        world_size=world_size,
        nnodes=nnodes,
        local_world_size=world_size // nnodes,
        intra_node_bw=link.intra_node_bw,
        inter_node_bw=link.inter_node_bw,
        intra_node_lat=link.intra_node_lat,
        inter_node_lat=link.inter_node_lat,
        flops_rate=flops_rate,
        num_sms=num_sms,
        nics_per_node=link.nics_per_node,
    )


def node_of(rank: int, topo: Topology) -> int:
    """Node housing `rank` (rank // local_world_size)."""
    _check_rank(rank, topo)
    return rank // topo.local_world_size


def local_rank_of(rank: int, topo: Topology) -> int:
    """Rank's index within its node (rank % local_world_size)."""
    _check_rank(rank, topo)
    return rank % topo.local_world_size


def same_node(a: int, b: int, topo: Topology) -> bool:
    return node_of(a, topo) == node_of(b, topo)


def _check_rank(rank: int, topo: Topology):
    if not 0 <= rank < topo.world_size:
        raise ValueError(f"rank {rank} out of range [0, {topo.world_size})")


def topology_from_config(source) -> Topology:
    """Build a Topology from a flat key-value config file path or a mapping.

    Recognized keys: world_size, nnodes, profile, intra_node_bw, inter_node_bw,
    intra_node_lat, inter_node_lat, flops_rate, num_sms, nics_per_node.
    Explicit values override the chosen profile. A [topology] section is
    honored when present.
    """
    if isinstance(source, dict):
        cfg = dict(source)
    else:
        cfg = load_config(source)
    cfg = cfg.get("topology", cfg)
    try:
        world_size = int(cfg["world_size"])
        nnodes = int(cfg.get("nnodes", 1))
    except KeyError as e:
        raise ConfigError(f"missing topology key: {e}") from e
    profile = cfg.get("profile", DEFAULT_PROFILE)
    if profile not in LINK_PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(LINK_PROFILES)}")
    base = LINK_PROFILES[profile]
    link = LinkConfig(
        intra_node_bw=float(cfg.get("intra_node_bw", base.intra_node_bw)),
        inter_node_bw=float(cfg.get("inter_node_bw", base.inter_node_bw)),
        intra_node_lat=float(cfg.get("intra_node_lat", base.intra_node_lat)),
        inter_node_lat=float(cfg.get("inter_node_lat", base.inter_node_lat)),
        nics_per_node=int(cfg.get("nics_per_node", base.nics_per_node)),
    )
    return build_topology(world_size, nnodes, link,
                          flops_rate=float(cfg.get("flops_rate", DEFAULT_FLOPS_RATE)),
                          num_sms=int(cfg.get("num_sms", DEFAULT_NUM_SMS)))
