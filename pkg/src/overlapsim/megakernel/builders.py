"""Task builders: turn layer descriptions into per-tile task records plus a
dependency table derived from region intersection.

Each consumer tile declares the input regions it reads; producers declare how
their output is tiled. A dependency entry is emitted for every producer tile
whose output region intersects a consumer input region; require_full inputs
depend on the producer's entire tile range.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import BuildError, ProtocolError
from .encoding import DTYPE_TAGS, INT_PER_DEPS, IoSlot, TaskRecord


@dataclass(frozen=True)
class MkTensor:
    """A symmetric-heap tensor: every rank holds a mirrored copy."""
    name: str
    offset: int
    dtype: np.dtype
    shape: tuple[int, ...]

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.shape)) * self.dtype.itemsize

    def io_slot(self) -> IoSlot:
        return IoSlot(offset=self.offset, dtype_tag=DTYPE_TAGS[np.dtype(self.dtype)],
                      dims=tuple(int(d) for d in self.shape))


@dataclass(frozen=True)
class InputDependencyDesc:
    tensor: MkTensor
    require_full: bool = False
    start_indices: tuple[int, int] = (0, 0)
    data_sizes: tuple[int, int] | None = None  # None = whole tensor


@dataclass(frozen=True)
class OutputTilingDesc:
    tile_sizes: tuple[int, int]


@dataclass(frozen=True)
class TileSpec:
    """One tile of one layer: what it reads plus the kernel's tile id."""
    tile_id: int
    inputs: tuple[InputDependencyDesc, ...]


@dataclass
class LayerPlan:
    op_type: str
    io_tensors: list  # [inputs, outputs]
    config: dict
    num_tiles: int
    tiles: list[TileSpec]
    out_tiling: dict  # tensor name -> OutputTilingDesc


@dataclass
class Builder:
    op_type: str
    task_type: int
    plan: Callable  # (io_tensors, config) -> LayerPlan


_REGISTRY: dict[str, Builder] = {}


def register_task_builder(op_type: str, plan_fn) -> None:
    """Register a layer planner under a unique op_type (insertion-ordered)."""
    if op_type in _REGISTRY:
        raise ProtocolError(f"op_type {op_type!r} already registered")
    _REGISTRY[op_type] = Builder(op_type=op_type, task_type=len(_REGISTRY), plan=plan_fn)


def get_task_builder(op_type: str) -> Builder:
    if op_type not in _REGISTRY:
        raise BuildError(f"unknown op_type {op_type!r}; registered: {list(_REGISTRY)}")
    return _REGISTRY[op_type]


def registered_ops() -> list[str]:
    return list(_REGISTRY)


@dataclass
class BuiltGraph:
    tasks: list[TaskRecord]
    dep_table: np.ndarray  # [n, INT_PER_DEPS] int32
    layer_configs: dict[int, dict]  # layer_id -> config
    layer_ops: dict[int, str]
    max_task_id: int
    max_tiles_per_op: int


def build_task_graph(layers, device_prop=None) -> BuiltGraph:
    """layers: sequence of (op_type, io_tensors, config). io_tensors is
    [[inputs...], [outputs...]] of MkTensor. Returns the flattened task list
    (one record per tile) plus the dependency table feeding the scoreboard."""
    producers: dict[str, tuple[int, OutputTilingDesc, MkTensor, int]] = {}
    tasks: list[TaskRecord] = []
    dep_rows: list[tuple[int, int, int]] = []
    configs: dict[int, dict] = {}
    ops: dict[int, str] = {}
    max_tiles = 1
    for layer_id, (op_type, io_tensors, config) in enumerate(layers):
        builder = get_task_builder(op_type)
        plan = builder.plan(io_tensors, dict(config))
        task_id = layer_id
        configs[task_id] = plan.config
        ops[task_id] = op_type
        max_tiles = max(max_tiles, plan.num_tiles)
        io_slots = tuple(t.io_slot() for t in io_tensors[0] + io_tensors[1])
        for tile in plan.tiles:
            dep_start = len(dep_rows)
            for desc in tile.inputs:
                prod = producers.get(desc.tensor.name)
                if prod is None:
                    continue
                p_task, p_tiling, p_tensor, p_ntiles = prod
                if desc.require_full:
                    dep_rows.append((p_task, 0, p_ntiles))
                    continue
                for lo, hi in _intersect_tiles(desc, p_tiling, p_tensor):
                    dep_rows.append((p_task, lo, hi))
            tasks.append(TaskRecord(
                task_type=builder.task_type, layer_id=layer_id, task_id=task_id,
                tile_id=tile.tile_id, dep_start=dep_start, dep_end=len(dep_rows),
                io=io_slots))
        for out in io_tensors[1]:
            producers[out.name] = (task_id, plan.out_tiling[out.name], out, plan.num_tiles)
    dep_table = np.array(dep_rows, dtype=np.int32).reshape(-1, INT_PER_DEPS)
    return BuiltGraph(tasks=tasks, dep_table=dep_table, layer_configs=configs,
                      layer_ops=ops, max_task_id=len(layers) - 1 if layers else 0,
                      max_tiles_per_op=max_tiles)


def _intersect_tiles(desc: InputDependencyDesc, tiling: OutputTilingDesc,
                     tensor: MkTensor):
    """Producer tile-id ranges whose output regions intersect the input region."""
    r0, c0 = desc.start_indices
    sizes = desc.data_sizes or tensor.shape
    r1, c1 = r0 + sizes[0], c0 + sizes[1]
    rows, cols = tensor.shape
    if r0 < 0 or c0 < 0 or r1 > rows or c1 > cols:
        raise BuildError(f"input region [{r0}:{r1}, {c0}:{c1}] exceeds "
                         f"{tensor.name} of shape {tensor.shape}")
    ts_m, ts_n = tiling.tile_sizes
    ntn = -(-cols // ts_n)
    tm0, tm1 = r0 // ts_m, (r1 - 1) // ts_m
    tn0, tn1 = c0 // ts_n, (c1 - 1) // ts_n
    for tm in range(tm0, tm1 + 1):
        yield tm * ntn + tn0, tm * ntn + tn1 + 1


# -- shipped builders ----------------------------------------------------------------


def _plan_linear(io_tensors, config) -> LayerPlan:
    (x, w), (y) = io_tensors[0], io_tensors[1]
    y = y[0]
    m, k = x.shape
    n, wk = w.shape
    if wk != k or y.shape != (m, n):
        raise BuildError(f"linear shapes inconsistent: x{x.shape} w{w.shape} y{y.shape}")
    cfg = {"block_m": 16, "block_n": 16, "block_k": 16, "num_stages": 3}
    cfg.update(config)
    bm, bn = cfg["block_m"], cfg["block_n"]
    ntm, ntn = -(-m // bm), -(-n // bn)
    tiles = []
    for tm in range(ntm):
        for tn in range(ntn):
            rm = min(bm, m - tm * bm)
            rn = min(bn, n - tn * bn)
            tiles.append(TileSpec(
                tile_id=tm * ntn + tn,
                inputs=(
                    InputDependencyDesc(x, start_indices=(tm * bm, 0), data_sizes=(rm, k)),
                    InputDependencyDesc(w, start_indices=(tn * bn, 0), data_sizes=(rn, k)),
                ),
            ))
    return LayerPlan(op_type="linear", io_tensors=io_tensors, config=cfg,
                     num_tiles=ntm * ntn, tiles=tiles,
                     out_tiling={y.name: OutputTilingDesc(tile_sizes=(bm, bn))})


def _plan_add(io_tensors, config) -> LayerPlan:
    (a, b), (y,) = io_tensors[0], io_tensors[1]
    if a.shape != b.shape or a.shape != y.shape:
        raise BuildError(f"add shapes must match: {a.shape} {b.shape} {y.shape}")
    cfg = {"block_rows": 16}
    cfg.update(config)
    rows, cols = a.shape
    br = cfg["block_rows"]
    ntm = -(-rows // br)
    tiles = []
    for tm in range(ntm):
        rm = min(br, rows - tm * br)
        region = dict(start_indices=(tm * br, 0), data_sizes=(rm, cols))
        tiles.append(TileSpec(
            tile_id=tm,
            inputs=(InputDependencyDesc(a, **region), InputDependencyDesc(b, **region)),
        ))
    return LayerPlan(op_type="add", io_tensors=io_tensors, config=cfg,
                     num_tiles=ntm, tiles=tiles,
                     out_tiling={y.name: OutputTilingDesc(tile_sizes=(br, cols))})


def _plan_allreduce(io_tensors, config) -> LayerPlan:
    (x,), (y,) = io_tensors[0], io_tensors[1]
    if x.shape != y.shape:
        raise BuildError(f"allreduce shapes must match: {x.shape} {y.shape}")
    cfg = {"block_rows": 16}
    cfg.update(config)
    rows, cols = x.shape
    br = cfg["block_rows"]
    ntm = -(-rows // br)
    tiles = [TileSpec(tile_id=tm, inputs=(InputDependencyDesc(x, require_full=True),))
             for tm in range(ntm)]
    return LayerPlan(op_type="allreduce", io_tensors=io_tensors, config=cfg,
                     num_tiles=ntm, tiles=tiles,
                     out_tiling={y.name: OutputTilingDesc(tile_sizes=(br, cols))})


register_task_builder("linear", _plan_linear)
register_task_builder("add", _plan_add)
register_task_builder("allreduce", _plan_allreduce)
