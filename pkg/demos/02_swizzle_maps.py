"""Tile execution orders, visualized.

Gather mode starts each rank at its own rows; scatter mode starts at the
successor's rows so remote-bound results leave first. With imperfect tiling
(rows per rank not a multiple of the tile height), tiles straddling a
boundary are marked '*' and get ordered so every consumer sees them early.
"""

import numpy as np

from overlapsim.swizzle import SwizzleParams, render_swizzle_map, swizzle_ag_moe

perfect = SwizzleParams(m=4 * 1024, n=256, k=256, block_size_m=256, block_size_n=256,
                        block_size_k=64, group_size_m=4, rank=0, world_size=4)

print("scatter mode, 4 ranks, perfect tiling (each row is one rank's order):")
print(render_swizzle_map(perfect, "gemm_rs"))
print("\ngather mode, same shape:")
print(render_swizzle_map(perfect, "ag_gemm"))

imperfect = SwizzleParams(m=8 * 997, n=256, k=256, block_size_m=256, block_size_n=256,
                          block_size_k=64, group_size_m=4, rank=0, world_size=8,
                          nnodes=2)
print("\nscatter mode, 8 ranks over 2 nodes, 997 rows per rank (cross-rank tiles *):")
print(render_swizzle_map(imperfect, "gemm_rs"))

# -- dynamic expert-routed schedule ---------------------------------------------

rng = np.random.default_rng(7)
tp, experts = 4, 3
routing = rng.integers(0, 6, size=(tp, experts))
print(f"\ntokens per (rank, expert):\n{routing}")
sched = swizzle_ag_moe(routing, rank=1, n_experts=experts, tp_size=tp,
                       local_tp_size=tp, block_size_m=4)
print("rank 1's schedule (tile, expert, needs ranks, arrival stage):")
for i in range(sched.ntiles):
    print(f"  tile {int(sched.tiled_m[i]):2d}  expert {int(sched.expert_id[i])}  "
          f"ranks {int(sched.segment_start[i])}..{int(sched.segment_end[i])}  "
          f"stage {int(sched.stage[i])}")
print("tiles are grouped by expert, earliest-arriving data first within each")
