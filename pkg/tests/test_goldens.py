"""Byte-stable golden files: a fixed 2-rank allgather+GEMM trace and the
rendered tile maps. Regenerate with `python tests/test_goldens.py` after an
intentional behavior change."""

import pathlib

import numpy as np

from overlapsim.kernels import WorkloadContext, ag_gemm
from overlapsim.simengine import export_chrome_trace
from overlapsim.swizzle import SwizzleParams, render_swizzle_map
from overlapsim.topology import build_topology

GOLDEN_DIR = pathlib.Path(__file__).parent / "goldens"


def golden_trace(tmp_dir) -> bytes:
    rng = np.random.default_rng(2024)
    a = [rng.integers(-4, 4, (8, 8)).astype(np.int64) for _ in range(2)]
    b = [rng.integers(-4, 4, (8, 8)).astype(np.int64) for _ in range(2)]
    topo = build_topology(2, 1, num_sms=4)
    ctx = WorkloadContext(topology=topo, block_m=4, block_n=4, block_k=4, group_m=2,
                          num_gemm_sms=2, num_comm_sms=1, seed=2024)
    run = ag_gemm(a, b, ctx)
    path = pathlib.Path(tmp_dir) / "golden_trace.json"
    export_chrome_trace(run.trace, path)
    return path.read_bytes()


def golden_render() -> str:
    perfect = SwizzleParams(m=16, n=8, k=8, block_size_m=2, block_size_n=2,
                            block_size_k=2, group_size_m=1, rank=0, world_size=4)
    imperfect = SwizzleParams(m=4 * 997, n=256, k=64, block_size_m=256,
                              block_size_n=256, block_size_k=64, group_size_m=4,
                              rank=0, world_size=4, nnodes=2)
    return "\n\n".join([
        render_swizzle_map(perfect, "gemm_rs"),
        render_swizzle_map(perfect, "ag_gemm"),
        render_swizzle_map(imperfect, "gemm_rs"),
        render_swizzle_map(imperfect, "ag_gemm"),
    ]) + "\n"


def golden_output() -> bytes:
    from overlapsim.tensorio import tensor_to_bytes

    rng = np.random.default_rng(2024)
    a = [rng.integers(-4, 4, (8, 8)).astype(np.int64) for _ in range(2)]
    b = [rng.integers(-4, 4, (8, 8)).astype(np.int64) for _ in range(2)]
    topo = build_topology(2, 1, num_sms=4)
    ctx = WorkloadContext(topology=topo, block_m=4, block_n=4, block_k=4, group_m=2,
                          num_gemm_sms=2, num_comm_sms=1, seed=2024)
    return tensor_to_bytes(ag_gemm(a, b, ctx).outputs[0])


def test_trace_golden(tmp_path):
    assert (GOLDEN_DIR / "ag_gemm_2rank_trace.json").read_bytes() == golden_trace(tmp_path)


def test_render_golden():
    assert (GOLDEN_DIR / "swizzle_maps.txt").read_text() == golden_render()


def test_output_tensor_golden():
    assert (GOLDEN_DIR / "ag_gemm_rank0_out.bin").read_bytes() == golden_output()


if __name__ == "__main__":
    import tempfile

    GOLDEN_DIR.mkdir(exist_ok=True)
    with tempfile.TemporaryDirectory() as t:
        (GOLDEN_DIR / "ag_gemm_2rank_trace.json").write_bytes(golden_trace(t))
    (GOLDEN_DIR / "swizzle_maps.txt").write_text(golden_render())
    (GOLDEN_DIR / "ag_gemm_rank0_out.bin").write_bytes(golden_output())
    print("goldens regenerated under", GOLDEN_DIR)
