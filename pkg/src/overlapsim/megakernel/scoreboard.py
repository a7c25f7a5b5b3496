"""Per-(task, tile) readiness flags in the symmetric signal space.

Flags are monotone within a run: release_tile flips one flag 0 -> 1 exactly
once (double release is a protocol error when debug checking is on), and
wait_deps acquire-blocks until every flag referenced by a task's dependency
rows is set. Flags are symmetric, so cross-rank task implementations can wait
on a peer's copy of the same entries.
"""

from __future__ import annotations

import numpy as np

from ..errors import ProtocolError
from ..shmem import SigHandle, SymmetricHeap
from .encoding import TaskRecord


class Scoreboard:
    def __init__(self, heap: SymmetricHeap, flags: SigHandle, dep_table: np.ndarray,
                 max_task_id: int, max_tiles_per_op: int, rank: int, debug: bool = True):
        need = (max_task_id + 1) * max_tiles_per_op
        if flags.nslots < need:
            raise ValueError(f"scoreboard needs {need} flag slots, handle has {flags.nslots}")
        self.heap = heap
        self.flags = flags
        self.dep_table = dep_table
        self.max_task_id = max_task_id
        self.max_tiles_per_op = max_tiles_per_op
        self.rank = rank
        self.debug = debug

    def _slot(self, task_id: int, tile: int) -> int:
        return task_id * self.max_tiles_per_op + tile

    def wait_deps(self, task: TaskRecord):
        yield from self.wait_deps_on(task, self.rank)

    def wait_deps_on(self, task: TaskRecord, pe: int):
        """Acquire-wait every dependency flag of `task` on rank `pe`'s copy."""
        for row in range(task.dep_start, task.dep_end):
            producer, lo, hi = (int(x) for x in self.dep_table[row])
            if hi <= lo:
                continue
            yield from self.heap.wait(
                self.flags, self._slot(producer, lo), hi - lo, pe=pe,
                semantic="acquire", value=1,
                note=f"scoreboard task {producer} tiles {lo}..{hi - 1}")

    def release_tile(self, task: TaskRecord, tile: int) -> None:
        slot = self._slot(task.task_id, tile)
        if self.debug and self.heap.ld(self.flags, slot, pe=self.rank) != 0:
            raise ProtocolError(
                f"double release of task {task.task_id} tile {tile} on rank {self.rank}")
        self.heap.st(self.flags, slot, 1, pe=self.rank, scope="gpu",
                     semantic="release", name="release_tile")

    def flags_view(self, pe: int) -> np.ndarray:
        return self.heap.sig_view(self.flags, pe)
