"""Fused-graph executor: per-SM queues drained by fetch / wait / dispatch /
release loops on every virtual rank.

All layer tensors live in the symmetric heap (one mirrored copy per rank), so
the cross-rank allreduce task can poll peer scoreboards and team-reduce peer
copies directly. Scheduling is static: queues are encoded up front and the
executor never reorders; a queue that violates dependency order on a single
SM deadlocks and is reported by the engine's watchdog.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import BuildError
from ..shmem import SymmetricHeap, SymmHandle
from ..simengine import Engine, Trace
from ..topology import Topology
from .builders import BuiltGraph, MkTensor, build_task_graph, get_task_builder
from .encoding import TaskRecord, encode_work_queues, fetch_task
from .scoreboard import Scoreboard


@dataclass(frozen=True)
class DeviceProp:
    num_sms: int


@dataclass
class MegaProgram:
    """Declares heap tensors and layers; build() flattens to tasks + deps.

    Tensor offsets are assigned at declaration time with the same bump policy
    the heap uses, so records encoded before the run resolve to the right
    regions inside it.
    """

    topology: Topology
    tensors: list = field(default_factory=list)
    layers: list = field(default_factory=list)
    _top: int = 0

    def tensor(self, name: str, shape, dtype) -> MkTensor:
        if any(t.name == name for t in self.tensors):
            raise BuildError(f"tensor {name!r} already declared")
        dtype = np.dtype(dtype)
        offset = -(-self._top // 16) * 16
        t = MkTensor(name=name, offset=offset, dtype=dtype, shape=tuple(int(d) for d in shape))
        self._top = offset + t.nbytes
        self.tensors.append(t)
        return t

    def layer(self, op_type: str, inputs, outputs, **config) -> None:
        get_task_builder(op_type)  # fail fast on unknown ops
        self.layers.append((op_type, [list(inputs), list(outputs)], config))

    def build(self, device_prop: DeviceProp | None = None) -> BuiltGraph:
        return build_task_graph(self.layers, device_prop)


@dataclass
class MegaRun:
    outputs: dict  # tensor name -> list of per-rank arrays
    trace: Trace
    heap: SymmetricHeap
    scoreboards: list


def run_megakernel(program: MegaProgram, built: BuiltGraph, num_sms: int, *,
                   queues=None, counts=None, inputs: dict | None = None,
                   seed: int = 0, debug_scoreboard: bool = True) -> MegaRun:
    """Execute the task graph on world_size ranks with num_sms workers each.

    `inputs` maps tensor names to either one array (broadcast to every rank)
    or a per-rank list. Pass explicit queues/counts to override the default
    round-robin static schedule.
    """
    topo = program.topology
    if num_sms < 1 or num_sms > topo.num_sms:
        raise ValueError(f"num_sms must be in [1, {topo.num_sms}]")
    if queues is None:
        queues, counts = encode_work_queues(built.tasks, num_sms)
    elif counts is None:
        raise ValueError("explicit queues need explicit counts")

    engine = Engine(topo, seed=seed)
    heap = SymmetricHeap(topo, engine, data_bytes=program._top + 4096,
                         signal_slots=(built.max_task_id + 1) * built.max_tiles_per_op + 16)
    for t in program.tensors:
        h = heap.alloc(t.nbytes)
        assert h.offset == t.offset, "heap layout must match the declared offsets"
    flags = heap.alloc_signals((built.max_task_id + 1) * built.max_tiles_per_op)

    inputs = inputs or {}
    by_name = {t.name: t for t in program.tensors}
    for name, value in inputs.items():
        t = by_name[name]
        per_rank = value if isinstance(value, (list, tuple)) else [value] * topo.world_size
        if len(per_rank) != topo.world_size:
            raise ValueError(f"input {name!r} needs {topo.world_size} per-rank arrays")
        for r, arr in enumerate(per_rank):
            view = heap.view(_handle(t), r, t.dtype, t.shape)
            view[:] = np.asarray(arr, dtype=t.dtype).reshape(t.shape)

    boards = []
    for rank in range(topo.world_size):
        sb = Scoreboard(heap, flags, built.dep_table, built.max_task_id,
                        built.max_tiles_per_op, rank, debug=debug_scoreboard)
        boards.append(sb)
        for sm in range(num_sms):
            engine.spawn(rank, f"sm{sm}", _sm_worker(engine, heap, sb, built,
                                                     queues, counts, rank, sm))
    trace = engine.run()
    outputs = {t.name: [heap.view(_handle(t), r, t.dtype, t.shape).copy()
                        for r in range(topo.world_size)] for t in program.tensors}
    return MegaRun(outputs=outputs, trace=trace, heap=heap, scoreboards=boards)


def _handle(t: MkTensor):
    return SymmHandle(offset=t.offset, nbytes=t.nbytes)


def _sm_worker(engine, heap, sb: Scoreboard, built: BuiltGraph, queues, counts,
               rank: int, sm_id: int):
    n_tasks = int(counts[sm_id])
    for idx in range(n_tasks):
        task = fetch_task(queues, idx, sm_id, counts)
        yield from sb.wait_deps(task)
        impl = TASK_IMPLS.get(built.layer_ops[task.task_id])
        if impl is None:
            raise BuildError(f"no implementation for task_type {task.task_type}")
        yield from impl(engine, heap, sb, task, rank, built.layer_configs[task.task_id])


# -- task implementations -------------------------------------------------------------


def _views(heap, task: TaskRecord, rank: int):
    out = []
    for slot in task.io:
        h = SymmHandle(offset=slot.offset, nbytes=slot.nbytes)
        out.append(heap.view(h, rank, slot.dtype, slot.dims))
    return out


def _linear_impl(engine, heap, sb, task, rank, cfg):
    x, w, y = _views(heap, task, rank)
    m, k = x.shape
    n = w.shape[0]
    bm, bn = cfg["block_m"], cfg["block_n"]
    ntn = -(-n // bn)
    tm, tn = task.tile_id // ntn, task.tile_id % ntn
    r0, r1 = tm * bm, min((tm + 1) * bm, m)
    c0, c1 = tn * bn, min((tn + 1) * bn, n)
    yield from engine.compute_tile(r1 - r0, c1 - c0, k, name="linear_tile",
                                   tile=task.tile_id, task=task.task_id)
    y[r0:r1, c0:c1] = x[r0:r1] @ w[c0:c1].T
    sb.release_tile(task, task.tile_id)


def _add_impl(engine, heap, sb, task, rank, cfg):
    a, b, y = _views(heap, task, rank)
    br = cfg["block_rows"]
    r0, r1 = task.tile_id * br, min((task.tile_id + 1) * br, a.shape[0])
    yield from engine.compute((r1 - r0) * a.shape[1], name="add_tile",
                              tile=task.tile_id, task=task.task_id)
    y[r0:r1] = a[r0:r1] + b[r0:r1]
    sb.release_tile(task, task.tile_id)


def _allreduce_impl(engine, heap, sb, task, rank, cfg):
    x, y = _views(heap, task, rank)
    world = heap.topology.world_size
    # local deps were waited by the dispatch loop; the sum also needs every
    # peer's producer tiles, visible through their symmetric scoreboards
    for pe in range(world):
        if pe != rank:
            yield from sb.wait_deps_on(task, pe)
    br = cfg["block_rows"]
    rows = x.shape[0]
    r0, r1 = task.tile_id * br, min((task.tile_id + 1) * br, rows)
    h = SymmHandle(offset=task.io[0].offset, nbytes=task.io[0].nbytes)
    block = yield from heap.multimem_ld_reduce_block(h, rank, x.dtype, x.shape,
                                                     r0, r1 - r0, 0, x.shape[1])
    y[r0:r1] = block
    sb.release_tile(task, task.tile_id)


TASK_IMPLS = {
    "linear": _linear_impl,
    "add": _add_impl,
    "allreduce": _allreduce_impl,
}
