"""One fused graph instead of many launches: the scoreboard executor.

Declares a two-layer MLP as heap tensors + layers, inspects the integer task
records and the dependency DAG, runs it over several static schedules, and
finishes by provoking the watchdog with a consumer-before-producer queue.
"""

import numpy as np

from overlapsim.megakernel import (
    INT_PER_TASK,
    MegaProgram,
    dump_task_graph,
    encode_work_queues,
    run_megakernel,
)
from overlapsim.simengine import DeadlockError, makespan
from overlapsim.topology import build_topology

rng = np.random.default_rng(1)
world = 2
topo = build_topology(world, 1, flops_rate=2e11, num_sms=8)

prog = MegaProgram(topo)
m, k, h = 64, 32, 48
x = prog.tensor("x", (m, k), np.int64)
w1 = prog.tensor("w1", (h, k), np.int64)
h1 = prog.tensor("h1", (m, h), np.int64)
bias = prog.tensor("bias", (m, h), np.int64)
h2 = prog.tensor("h2", (m, h), np.int64)
w2 = prog.tensor("w2", (k, h), np.int64)
y = prog.tensor("y", (m, k), np.int64)
prog.layer("linear", [x, w1], [h1], block_m=16, block_n=16)
prog.layer("add", [h1, bias], [h2], block_rows=16)
prog.layer("linear", [h2, w2], [y], block_m=16, block_n=16)
built = prog.build()

print(f"{len(built.tasks)} tile tasks, {built.dep_table.shape[0]} dependency rows, "
      f"{INT_PER_TASK} int32 words per task record")
print("first lines of the DAG dump:")
for line in dump_task_graph(built.tasks, built.dep_table).splitlines()[:6]:
    print(" ", line)

vals = {"x": rng.integers(-5, 5, (m, k)).astype(np.int64),
        "w1": rng.integers(-5, 5, (h, k)).astype(np.int64),
        "bias": rng.integers(-5, 5, (m, h)).astype(np.int64),
        "w2": rng.integers(-5, 5, (k, h)).astype(np.int64)}
want = (vals["x"] @ vals["w1"].T + vals["bias"]) @ vals["w2"].T

for num_sms in (1, 2, 4, 8):
    run = run_megakernel(prog, built, num_sms, inputs=vals)
    ok = all(np.array_equal(out, want) for out in run.outputs["y"])
    print(f"{num_sms} SM(s) per rank: bitwise={ok} "
          f"makespan={makespan(run.trace) * 1e6:7.2f}us")

# static scheduling means a bad queue is a compile-time bug; the watchdog
# reports exactly which scoreboard entry never arrived
consumer_first = sorted(built.tasks, key=lambda t: -t.task_id)
queues, counts = encode_work_queues(consumer_first, 1)
try:
    run_megakernel(prog, built, 1, queues=queues, counts=counts, inputs=vals)
except DeadlockError as e:
    print("\nadversarial consumer-first queue on one SM:")
    print(" ", str(e).splitlines()[1].strip())
