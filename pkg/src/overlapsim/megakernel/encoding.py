"""Integer task records, per-SM work queues, and their wire layout.

A task is INT_PER_TASK little-endian int32 words: six scalar fields at fixed
offsets (type, layer, task, tile, dependency-entry start/end) followed by
MAX_IO_TENSORS io slots of INTS_PER_IO_SLOT words each (region byte offset,
dtype tag, MAX_NUM_TENSOR_DIMS dims; offset -1 marks an empty slot, unused
dims are 0). The queue buffer is [slot][sm][INT_PER_TASK], so a fetch decodes
at idx * INT_PER_TASK * NUM_SMS + sm_id * INT_PER_TASK + field offset.

Dependency-table rows are INT_PER_DEPS words: producer task_id, first tile,
one-past-last tile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TASK_TYPE_OFFSET = 0
LAYER_ID_OFFSET = 1
TASK_ID_OFFSET = 2
TILE_ID_OR_START_OFFSET = 3
DEPEND_ENTRY_START_OFFSET = 4
DEPEND_ENTRY_END_OFFSET = 5
IO_TENSORS_OFFSET = 6

MAX_NUM_TENSOR_DIMS = 4
INTS_PER_IO_SLOT = 2 + MAX_NUM_TENSOR_DIMS
MAX_IO_TENSORS = 4
INT_PER_TASK = IO_TENSORS_OFFSET + MAX_IO_TENSORS * INTS_PER_IO_SLOT
INT_PER_DEPS = 3

_I32_MIN, _I32_MAX = -(2 ** 31), 2 ** 31 - 1

DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.int64): 1}
TAG_DTYPES = {v: k for k, v in DTYPE_TAGS.items()}


@dataclass(frozen=True)
class IoSlot:
    offset: int  # tensor region's byte offset in the symmetric heap
    dtype_tag: int
    dims: tuple[int, ...]

    @property
    def dtype(self) -> np.dtype:
        return TAG_DTYPES[self.dtype_tag]

    @property
    def nbytes(self) -> int:
        count = 1
        for d in self.dims:
            count *= d
        return count * self.dtype.itemsize


@dataclass(frozen=True)
class TaskRecord:
    task_type: int
    layer_id: int
    task_id: int
    tile_id: int
    dep_start: int
    dep_end: int
    io: tuple[IoSlot, ...] = ()


def _check_i32(value: int, what: str) -> int:
    if not _I32_MIN <= value <= _I32_MAX:
        raise ValueError(f"{what}={value} does not fit an int32 word")
    return int(value)


def encode_task(task: TaskRecord) -> np.ndarray:
    words = np.zeros(INT_PER_TASK, dtype=np.int32)
    words[TASK_TYPE_OFFSET] = _check_i32(task.task_type, "task_type")
    words[LAYER_ID_OFFSET] = _check_i32(task.layer_id, "layer_id")
    words[TASK_ID_OFFSET] = _check_i32(task.task_id, "task_id")
    words[TILE_ID_OR_START_OFFSET] = _check_i32(task.tile_id, "tile_id")
    words[DEPEND_ENTRY_START_OFFSET] = _check_i32(task.dep_start, "dep_start")
    words[DEPEND_ENTRY_END_OFFSET] = _check_i32(task.dep_end, "dep_end")
    if len(task.io) > MAX_IO_TENSORS:
        raise ValueError(f"at most {MAX_IO_TENSORS} io tensors per task")
    for i in range(MAX_IO_TENSORS):
        base = IO_TENSORS_OFFSET + i * INTS_PER_IO_SLOT
        if i >= len(task.io):
            words[base] = -1
            continue
        slot = task.io[i]
        if len(slot.dims) < 1 or len(slot.dims) > MAX_NUM_TENSOR_DIMS:
            raise ValueError(f"io tensor needs 1..{MAX_NUM_TENSOR_DIMS} dims, got {slot.dims}")
        if any(d < 1 for d in slot.dims):
            raise ValueError(f"io tensor dims must be >= 1, got {slot.dims}")
        words[base] = _check_i32(slot.offset, "io offset")
        words[base + 1] = _check_i32(slot.dtype_tag, "dtype tag")
        for j, d in enumerate(slot.dims):
            words[base + 2 + j] = _check_i32(d, "dim")
    return words


def decode_task(words: np.ndarray) -> TaskRecord:
    io = []
    for i in range(MAX_IO_TENSORS):
        base = IO_TENSORS_OFFSET + i * INTS_PER_IO_SLOT
        off = int(words[base])
        if off < 0:
            continue
        dims = []
        for j in range(MAX_NUM_TENSOR_DIMS):
            d = int(words[base + 2 + j])
            if d == 0:
                break
            dims.append(d)
        io.append(IoSlot(offset=off, dtype_tag=int(words[base + 1]), dims=tuple(dims)))
    return TaskRecord(
        task_type=int(words[TASK_TYPE_OFFSET]),
        layer_id=int(words[LAYER_ID_OFFSET]),
        task_id=int(words[TASK_ID_OFFSET]),
        tile_id=int(words[TILE_ID_OR_START_OFFSET]),
        dep_start=int(words[DEPEND_ENTRY_START_OFFSET]),
        dep_end=int(words[DEPEND_ENTRY_END_OFFSET]),
        io=tuple(io),
    )


def encode_work_queues(tasks, num_sms: int):
    """Round-robin tasks over num_sms queues.

    Returns (queues, counts): queues is int32 [slots, num_sms, INT_PER_TASK],
    counts[sm] the number of valid entries in queue sm.
    """
    if num_sms < 1:
        raise ValueError("num_sms must be >= 1")
    counts = np.zeros(num_sms, dtype=np.int32)
    slots = max(1, -(-len(tasks) // num_sms))
    queues = np.zeros((slots, num_sms, INT_PER_TASK), dtype=np.int32)
    queues[:, :, IO_TENSORS_OFFSET::INTS_PER_IO_SLOT] = -1  # empty io slots
    for i, task in enumerate(tasks):
        sm = i % num_sms
        queues[i // num_sms, sm] = encode_task(task)
        counts[sm] += 1
    return queues, counts


def fetch_task(queues: np.ndarray, idx: int, sm_id: int, counts=None,
               runtime_scheduler: bool = False) -> TaskRecord:
    """Decode queue entry (idx, sm_id) via the flat-buffer address arithmetic.

    With runtime_scheduler the buffer is one shared queue of back-to-back
    records and sm_id is ignored; the static executor never takes this branch,
    but the wire layout supports it.
    """
    flat = queues.reshape(-1)
    if runtime_scheduler:
        if not 0 <= idx < flat.size // INT_PER_TASK:
            raise ValueError(f"queue index {idx} out of range")
        base = idx * INT_PER_TASK
        return decode_task(flat[base:base + INT_PER_TASK])
    slots, num_sms, _ = queues.shape
    if counts is not None and not 0 <= idx < int(counts[sm_id]):
        raise ValueError(f"queue index {idx} out of range for sm {sm_id}")
    if not (0 <= idx < slots and 0 <= sm_id < num_sms):
        raise ValueError(f"queue index ({idx}, {sm_id}) out of range")
    base = idx * INT_PER_TASK * num_sms + sm_id * INT_PER_TASK
    return decode_task(flat[base:base + INT_PER_TASK])


# -- wire helpers -------------------------------------------------------------------


def queues_to_bytes(queues: np.ndarray) -> bytes:
    return np.ascontiguousarray(queues, dtype="<i4").tobytes()


def queues_from_bytes(buf: bytes, num_sms: int) -> np.ndarray:
    words = np.frombuffer(buf, dtype="<i4")
    if words.size % (num_sms * INT_PER_TASK) != 0:
        raise ValueError("work-queue byte length inconsistent with layout")
    return words.reshape(-1, num_sms, INT_PER_TASK).copy()


def deps_to_bytes(dep_table: np.ndarray) -> bytes:
    return np.ascontiguousarray(dep_table, dtype="<i4").tobytes()


def deps_from_bytes(buf: bytes) -> np.ndarray:
    words = np.frombuffer(buf, dtype="<i4")
    if words.size % INT_PER_DEPS != 0:
        raise ValueError("dependency table byte length inconsistent with layout")
    return words.reshape(-1, INT_PER_DEPS).copy()


def dump_task_graph(tasks, dep_table: np.ndarray) -> str:
    """Text DAG listing: one line per task tile with its producer tile ranges."""
    lines = []
    for t in tasks:
        deps = []
        for row in range(t.dep_start, t.dep_end):
            p, lo, hi = (int(x) for x in dep_table[row])
            deps.append(f"task {p} tiles [{lo},{hi})")
        suffix = " <- " + "; ".join(deps) if deps else ""
        lines.append(f"task {t.task_id}:{t.tile_id}{suffix}")
    return "\n".join(lines)
