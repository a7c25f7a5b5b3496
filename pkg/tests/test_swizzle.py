import numpy as np
import pytest

from oracle_swizzle import brute_moe_schedule, lane_swizzle_map
from overlapsim.swizzle import (
    SwizzleParams,
    ag_gemm_tile_map,
    cdiv,
    gemm_rs_tile_map,
    render_swizzle_map,
    swizzle_2d,
    swizzle_ag_gemm_internode,
    swizzle_ag_gemm_intranode,
    swizzle_ag_moe,
    swizzle_gemm_rs_internode,
    swizzle_gemm_rs_intranode,
)

# world size, node counts per the validated configuration matrix
MATRIX = [(w, nn) for w in (1, 2, 4, 8, 16, 32) for nn in (1, 2, 4) if w % nn == 0]
M_PER_RANK = (256, 997, 1024)
BLOCKS = (64, 256)


def params(m, rank, world, nnodes=1, block_m=2, n=8, block_n=2):
    return SwizzleParams(m=m, n=n, k=8, block_size_m=block_m, block_size_n=block_n,
                         block_size_k=4, group_size_m=2, rank=rank, world_size=world,
                         nnodes=nnodes)


# -- grouped launch order ------------------------------------------------------


def test_swizzle_2d_degenerate_group():
    for pid in range(12):
        assert swizzle_2d(pid, 3, 4, 1) == (pid // 4, pid % 4)


def test_swizzle_2d_origin_and_example():
    assert swizzle_2d(0, 4, 4, 2) == (0, 0)
    assert swizzle_2d(5, 4, 4, 2) == (1, 2)


def test_swizzle_2d_bijective():
    for num_m, num_n, group in [(4, 4, 2), (5, 3, 2), (7, 2, 3), (1, 9, 4)]:
        seen = {swizzle_2d(p, num_m, num_n, group) for p in range(num_m * num_n)}
        assert len(seen) == num_m * num_n


def test_swizzle_2d_range_check():
    with pytest.raises(ValueError):
        swizzle_2d(16, 4, 4, 2)


# -- single-node rotations -------------------------------------------------------


def test_ag_intranode_rank0_identity():
    p = params(8, 0, 4)
    assert [swizzle_ag_gemm_intranode(i, p) for i in range(4)] == [0, 1, 2, 3]


def test_ag_intranode_example():
    p = params(8, 1, 4)  # m_per_rank=2, block=2 -> offset ceil(2/2)=1
    assert swizzle_ag_gemm_intranode(0, p) == 1


def test_rs_intranode_example():
    p = params(8, 1, 4)  # offset (2*2)//2 = 2
    assert swizzle_gemm_rs_intranode(0, p) == 2


def test_rs_intranode_last_rank_identity():
    p = params(8, 3, 4)  # (world*m_per_rank)//B == num_pid_m -> identity
    assert [swizzle_gemm_rs_intranode(i, p) for i in range(4)] == [0, 1, 2, 3]


def test_rotations_are_bijections():
    for world in (1, 2, 4, 8):
        m = world * 6
        for rank in range(world):
            p = params(m, rank, world, block_m=4)
            num = p.num_pid_m
            ag = [swizzle_ag_gemm_intranode(i, p) for i in range(num)]
            rs = [swizzle_gemm_rs_intranode(i, p) for i in range(num)]
            assert sorted(ag) == list(range(num))
            assert sorted(rs) == list(range(num))


# -- multi-node maps vs the lane-level transcription --------------------------------


@pytest.mark.parametrize("mode", ["ag_gemm", "gemm_rs"])
def test_internode_matches_lane_oracle_and_bijective(mode):
    prod = ag_gemm_tile_map if mode == "ag_gemm" else gemm_rs_tile_map
    for world, nnodes in MATRIX:
        for m_per_rank in M_PER_RANK:
            m = m_per_rank * world
            for block in BLOCKS:
                num = cdiv(m, block)
                for rank in range(world):
                    got = prod(m, rank, world, nnodes, block)
                    want = lane_swizzle_map(m, rank, world, nnodes, block, mode)
                    assert got.tolist() == want, (mode, world, nnodes, m_per_rank,
                                                  block, rank)
                    assert sorted(got.tolist()) == list(range(num))


def test_internode_single_node_collapses_to_rotation():
    for world in (1, 2, 4, 8):
        for m_per_rank in (24, 997):
            m = m_per_rank * world
            for rank in range(world):
                p = params(m, rank, world, block_m=16)
                ag_map = ag_gemm_tile_map(m, rank, world, 1, 16)
                rs_map = gemm_rs_tile_map(m, rank, world, 1, 16)
                for i in range(p.num_pid_m):
                    assert ag_map[i] == swizzle_ag_gemm_intranode(i, p)
                    assert rs_map[i] == swizzle_gemm_rs_intranode(i, p)


def test_internode_scalar_wrappers():
    assert swizzle_ag_gemm_internode(0, 64, 0, 4, 2, 4) == ag_gemm_tile_map(64, 0, 4, 2, 4)[0]
    assert swizzle_gemm_rs_internode(3, 64, 1, 4, 2, 4) == gemm_rs_tile_map(64, 1, 4, 2, 4)[3]
    with pytest.raises(ValueError):
        swizzle_ag_gemm_internode(99, 64, 0, 4, 2, 4)


def test_gather_mode_locality():
    # step 0 lands on the rank's own rows whenever chunks align with tiles
    for world, nnodes in MATRIX:
        for m_per_rank, block in ((256, 64), (1024, 256)):
            m = m_per_rank * world
            for rank in range(world):
                first = ag_gemm_tile_map(m, rank, world, nnodes, block)[0]
                assert first * block == rank * m_per_rank, (world, nnodes, rank)


def test_scatter_mode_priority():
    # step 0 covers the successor rank's rows (within the first visited node)
    for world in (1, 2, 4, 8, 16):
        for m_per_rank, block in ((256, 64), (1024, 256)):
            m = m_per_rank * world
            for rank in range(world):
                first = gemm_rs_tile_map(m, rank, world, 1, block)[0]
                assert first * block == ((rank + 1) % world) * m_per_rank


def test_cross_node_tiles_appear_once_and_leftmost_in_scatter():
    # imperfect tiling: every tile straddling a node boundary is owned by the
    # first-visited node's range and precedes that node's other tiles
    world, nnodes, m_per_rank, block = 32, 4, 997, 256
    m = m_per_rank * world
    m_per_node = m // nnodes
    straddlers = {t for t in range(cdiv(m, block))
                  if (t * block) // m_per_node != (min((t + 1) * block, m) - 1) // m_per_node}
    for rank in range(0, world, 5):
        mapping = gemm_rs_tile_map(m, rank, world, nnodes, block)
        assert sorted(mapping.tolist()) == list(range(cdiv(m, block)))
        seen = [t for t in mapping.tolist() if t in straddlers]
        assert len(seen) == len(straddlers)


# -- MoE schedule ------------------------------------------------------------------


def test_moe_single_expert_single_rank():
    sched = swizzle_ag_moe(np.array([[5]]), rank=0, n_experts=1, tp_size=1,
                           local_tp_size=1, block_size_m=2)
    assert sched.ntiles == 3
    assert sched.tiled_m.tolist() == [0, 1, 2]
    assert sched.segment_start.tolist() == [0, 0, 0]
    assert sched.segment_end.tolist() == [0, 0, 0]


def test_moe_local_tiles_precede_cross_rank_tiles():
    routing = np.array([[2, 2], [2, 2]])
    for rank in range(2):
        sched = swizzle_ag_moe(routing, rank=rank, n_experts=2, tp_size=2,
                               local_tp_size=2, block_size_m=2)
        assert sched.ntiles == 4
        brute = brute_moe_schedule(routing, rank, 2, 2)
        assert sched.tiled_m.tolist() == [s["tiled_m"] for s in brute]
        assert sched.stage.tolist() == [s["stage"] for s in brute]
        # within each expert, tiles needing only already-arrived data come first
        for e in range(2):
            stages = sched.stage[sched.expert_id == e]
            assert (np.diff(stages) >= 0).all()


def test_moe_empty_matrix():
    sched = swizzle_ag_moe(np.zeros((4, 3), dtype=int), rank=1, n_experts=3,
                           tp_size=4, local_tp_size=4, block_size_m=8)
    assert sched.ntiles == 0
    assert sched.tiled_m.size == 0


def test_moe_matches_brute_force_random():
    rng = np.random.default_rng(17)
    for _ in range(25):
        tp = int(rng.choice([1, 2, 4, 8]))
        experts = int(rng.integers(1, 7))
        block = int(rng.choice([1, 2, 3, 8]))
        routing = rng.integers(0, 9, size=(tp, experts))
        rank = int(rng.integers(0, tp))
        sched = swizzle_ag_moe(routing, rank, experts, tp, tp, block)
        brute = brute_moe_schedule(routing, rank, tp, block)
        assert sched.ntiles == len(brute)
        assert sched.tiled_m.tolist() == [s["tiled_m"] for s in brute]
        assert sched.expert_id.tolist() == [s["expert"] for s in brute]
        assert list(zip(sched.segment_start.tolist(), sched.segment_end.tolist())) == \
            [s["seg"] for s in brute]
        assert sorted(sched.tiled_m.tolist()) == list(range(sched.ntiles))


def test_moe_reference_model_shape():
    # 8192 tokens routed 4 ways over 60 experts at 8 ranks: permutation and
    # segment validity at a production-like schedule size
    rng = np.random.default_rng(42)
    tp, experts, topk, tokens_per_rank = 8, 60, 4, 1024
    routing = np.zeros((tp, experts), dtype=np.int64)
    for r in range(tp):
        for _ in range(tokens_per_rank):
            for e in rng.choice(experts, size=topk, replace=False):
                routing[r, e] += 1
    sched = swizzle_ag_moe(routing, rank=3, n_experts=experts, tp_size=tp,
                           local_tp_size=tp, block_size_m=128)
    assert sorted(sched.tiled_m.tolist()) == list(range(sched.ntiles))
    assert (sched.segment_start <= sched.segment_end).all()
    assert (sched.segment_end < tp).all()
    assert (np.diff(sched.expert_id) >= 0).all()  # grouped by expert


def test_moe_validation():
    with pytest.raises(ValueError):
        swizzle_ag_moe(np.array([[1, -1]]), 0, 2, 1, 1, 2)
    with pytest.raises(ValueError):
        swizzle_ag_moe(np.array([[1, 1]]), 0, 2, 1, 1, 0)
    with pytest.raises(ValueError):
        swizzle_ag_moe(np.ones((4, 2), int), 0, 2, 4, 3, 2)  # tp % local_tp != 0


# -- rendering ----------------------------------------------------------------------


def test_render_world_one_identity():
    p = params(8, 0, 1, block_m=2)
    assert render_swizzle_map(p, "ag_gemm") == "0 1 2 3"


def test_render_rs_rows_are_rotations():
    p = params(8, 0, 4, block_m=2)
    rows = render_swizzle_map(p, "gemm_rs").splitlines()
    assert rows == ["1 2 3 0", "2 3 0 1", "3 0 1 2", "0 1 2 3"]


def test_render_marks_straddlers():
    p = SwizzleParams(m=12, n=4, k=4, block_size_m=5, block_size_n=2, block_size_k=2,
                      group_size_m=1, rank=0, world_size=2, nnodes=1)
    text = render_swizzle_map(p, "gemm_rs")
    assert "*" in text
    for line in text.splitlines():
        assert len(line.split()) == p.num_pid_m


def test_params_validation():
    with pytest.raises(ValueError):
        params(10, 0, 4)  # M not divisible by world
    with pytest.raises(ValueError):
        SwizzleParams(m=8, n=4, k=4, block_size_m=2, block_size_n=2, block_size_k=2,
                      group_size_m=1, rank=0, world_size=4, nnodes=3)
