"""Virtual clusters and the symmetric-memory substrate.

Builds a two-node topology, inspects the first-order cost model, then runs a
tiny producer/consumer pair over the simulated symmetric heap: a one-sided
put followed by a signal, observed through an acquire wait.
"""

import numpy as np

from overlapsim import Engine, SymmetricHeap, build_topology, makespan
from overlapsim.simengine import CostModel
from overlapsim.topology import LINK_PROFILES, local_rank_of, node_of

# -- 1. cluster shape ---------------------------------------------------------

topo = build_topology(16, 2, LINK_PROFILES["h800"], flops_rate=1e12, num_sms=8)
print(f"{topo.world_size} ranks over {topo.nnodes} nodes, "
      f"{topo.local_world_size} per node")
print(f"rank 9 lives on node {node_of(9, topo)} as local rank {local_rank_of(9, topo)}")

cost = CostModel.from_topology(topo)
mb = 1 << 20
print(f"moving 1 MiB intra-node: {cost.xfer_cost(mb, 'intra') * 1e6:.2f} us, "
      f"inter-node: {cost.xfer_cost(mb, 'inter') * 1e6:.2f} us")
print(f"one 128x128x4096 tile: {cost.tile_cost(128, 128, 4096) * 1e6:.2f} us\n")

# -- 2. one-sided put + signal over the symmetric heap -------------------------

engine = Engine(topo)
heap = SymmetricHeap(topo, engine, data_bytes=1 << 20, signal_slots=64)
payload = heap.alloc(8 * 1024)     # same offset on every rank
flag = heap.alloc_signals(1)


def producer(rank, peer):
    data = np.arange(1024, dtype=np.int64)
    # blocking put: completes (visible at the peer) before the next statement
    yield from heap.putmem(heap.symm_at(payload, peer), 0, data, from_pe=rank,
                           note="payload")
    heap.notify(flag, 0, pe=peer, value=1)  # release-ordered after the payload


def consumer(rank):
    token = yield from heap.wait(flag, 0, 1, pe=rank, semantic="acquire", value=1)
    view = heap.view(payload, rank, np.int64)[:1024]
    print(f"rank {rank} woke at t={token.time * 1e6:.2f} us, "
          f"payload checksum {int(view.sum())}")


engine.spawn(0, "producer", producer(0, peer=9))   # crosses the node boundary
engine.spawn(9, "consumer", consumer(9))
trace = engine.run()
print(f"end-to-end simulated time: {makespan(trace) * 1e6:.2f} us")
print("events:", [(e.kind, round(e.t_end * 1e6, 2)) for e in trace.events])
