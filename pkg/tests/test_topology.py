import pytest

from overlapsim.errors import ConfigError
from overlapsim.topology import (
    LINK_PROFILES,
    build_topology,
    local_rank_of,
    node_of,
    topology_from_config,
)


def test_single_node_local_world():
    assert build_topology(8, 1).local_world_size == 8


def test_two_node_local_world():
    assert build_topology(16, 2).local_world_size == 8


def test_non_divisible_world_rejected():
    with pytest.raises(ConfigError):
        build_topology(8, 3)


def test_default_profile_bandwidths():
    topo = build_topology(8, 1)
    assert topo.intra_node_bw == 200e9
    assert topo.inter_node_bw == 50e9
    hopper = build_topology(8, 2, LINK_PROFILES["hopper96"])
    assert hopper.intra_node_bw == 450e9
    assert hopper.inter_node_bw == 25e9
    assert hopper.nics_per_node == 4


def test_node_and_local_rank():
    topo = build_topology(16, 2)
    assert node_of(0, topo) == 0 and local_rank_of(0, topo) == 0
    assert node_of(9, topo) == 1 and local_rank_of(9, topo) == 1
    single = build_topology(8, 1)
    assert node_of(7, single) == 0 and local_rank_of(7, single) == 7


def test_rank_decomposition_roundtrip():
    for world, nodes in [(1, 1), (8, 1), (16, 2), (32, 4), (12, 3)]:
        topo = build_topology(world, nodes)
        for r in range(world):
            assert node_of(r, topo) * topo.local_world_size + local_rank_of(r, topo) == r


def test_out_of_range_rank():
    topo = build_topology(4, 1)
    with pytest.raises(ValueError):
        node_of(4, topo)
    with pytest.raises(ValueError):
        local_rank_of(-1, topo)


def test_build_is_pure():
    assert build_topology(16, 2) == build_topology(16, 2)


def test_from_config_file(tmp_path):
    path = tmp_path / "cluster.cfg"
    path.write_text("[topology]\nworld_size = 16\nnnodes = 2\nprofile = \"hopper96\"\n"
                    "inter_node_bw = 30e9\n")
    topo = topology_from_config(path)
    assert topo.world_size == 16 and topo.local_world_size == 8
    assert topo.intra_node_bw == 450e9
    assert topo.inter_node_bw == 30e9


def test_from_config_mapping_and_errors():
    topo = topology_from_config({"world_size": 4, "nnodes": 1})
    assert topo.world_size == 4
    with pytest.raises(ConfigError):
        topology_from_config({"nnodes": 2})
    with pytest.raises(ConfigError):
        topology_from_config({"world_size": 4, "profile": "dgx"})
