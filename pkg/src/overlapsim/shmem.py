"""Simulated symmetric memory: mirrored per-rank regions, 64-bit signal slots,
one-sided puts/gets, signal waits, barriers, atomics, and node-team multimem.

Every rank sees the same offsets (symmetry by construction). Control flow uses
the signal space (int64 slots); bulk data lives in the byte regions. Signal
stores/loads/atomics cost zero simulated time; data transfers are charged
latency + bytes/bandwidth by domain (same-rank copies are free). Both "gpu"
and "sys" scopes map to one global visibility domain — the scope is recorded
in traces but does not change semantics. acquire/release are realized as
sequentially consistent operations on the simulated store, which is strictly
stronger and preserves the ordering contracts.

Each worker's transfers are serialized like a copy-engine queue, so fence()
is a no-op marker; barrier_all() additionally drains the rank's outstanding
non-blocking puts before the rendezvous, sync_all() does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllocationError, ProtocolError
from .simengine import Advance, Barrier, Engine, Rendezvous, Sleep, WaitSlots
from .topology import Topology, node_of

SCOPES = ("gpu", "sys")
SEMANTICS = ("relaxed", "acquire", "release")

SIG_DTYPE = np.int64


@dataclass(frozen=True)
class SymmHandle:
    offset: int
    nbytes: int


@dataclass(frozen=True)
class SigHandle:
    base: int
    nslots: int


@dataclass(frozen=True)
class Token:
    """Opaque ordering witness returned by wait()."""
    pe: int
    slot: int
    num_slots: int
    time: float


def consume_token(value, token: Token):
    """Returns `value` unchanged; exists only to thread ordering through code."""
    return value


@dataclass(frozen=True)
class PendingOp:
    complete_at: float


@dataclass(frozen=True)
class RemoteRegion:
    """Addressable view of one rank's copy of a symmetric region."""
    heap: "SymmetricHeap"
    handle: SymmHandle
    pe: int

    @property
    def nbytes(self) -> int:
        return self.handle.nbytes

    def view(self, dtype, shape=None, offset: int = 0) -> np.ndarray:
        return self.heap.view(self.handle, self.pe, dtype, shape=shape, offset=offset)


def _check_scope_semantic(scope: str, semantic: str):
    if scope not in SCOPES:
        raise ValueError(f"invalid scope {scope!r}; expected one of {SCOPES}")
    if semantic not in SEMANTICS:
        raise ValueError(f"invalid semantic {semantic!r}; expected one of {SEMANTICS}")


class SymmetricHeap:
    """Per-rank mirrored byte regions plus a per-rank array of signal slots."""

    def __init__(self, topology: Topology, engine: Engine,
                 data_bytes: int = 1 << 24, signal_slots: int = 1 << 14):
        self.topology = topology
        self.engine = engine
        self.data_bytes = int(data_bytes)
        self.signal_slots = int(signal_slots)
        self.regions = [np.zeros(self.data_bytes, dtype=np.uint8) for _ in range(topology.world_size)]
        self.signal_space = [np.zeros(self.signal_slots, dtype=SIG_DTYPE) for _ in range(topology.world_size)]
        self._data_top = 0
        self._sig_top = 0
        self._rank_xfer_tail = [0.0] * topology.world_size  # outstanding nbi completion per rank
        self._worker_dma_tail: dict = {}  # per-worker copy-engine queue tail
        self._barrier_all = engine.make_barrier("barrier_all", topology.world_size)
        self._sync_all = engine.make_barrier("sync_all", topology.world_size)
        self._node_teams = [[r for r in range(topology.world_size)
                             if node_of(r, topology) == n] for n in range(topology.nnodes)]

    # ------------------------------------------------------------------ alloc

    def alloc(self, nbytes: int, align: int = 16) -> SymmHandle:
        """Collective symmetric allocation; same offset on every rank.

        Zero-length allocations are legal (dynamic shapes can produce empty
        chunks) and return a valid zero-length handle.
        """
        if nbytes < 0:
            raise ValueError("allocation size must be >= 0")
        off = -(-self._data_top // align) * align
        if off + nbytes > self.data_bytes:
            raise AllocationError(f"heap exhausted: need {off + nbytes} bytes, capacity {self.data_bytes}")
        self._data_top = off + nbytes
        return SymmHandle(offset=off, nbytes=int(nbytes))

    def alloc_collective(self, sizes) -> SymmHandle:
        """alloc() with explicit per-rank requests; sizes must agree."""
        sizes = list(sizes)
        if len(sizes) != self.topology.world_size:
            raise ProtocolError(f"collective allocation needs {self.topology.world_size} requests, got {len(sizes)}")
        if len(set(sizes)) != 1:
            raise ProtocolError(f"mismatched collective allocation sizes: {sizes}")
        return self.alloc(sizes[0])

    def alloc_signals(self, nslots: int) -> SigHandle:
        if nslots < 0:
            raise ValueError("signal slot count must be >= 0")
        if self._sig_top + nslots > self.signal_slots:
            raise AllocationError(f"signal space exhausted: need {self._sig_top + nslots} slots")
        h = SigHandle(base=self._sig_top, nslots=int(nslots))
        self._sig_top += nslots
        return h

    # ------------------------------------------------------------------ views

    def view(self, handle: SymmHandle, pe: int, dtype, shape=None, offset: int = 0) -> np.ndarray:
        self._check_pe(pe)
        dtype = np.dtype(dtype)
        if offset < 0 or offset > handle.nbytes:
            raise ValueError(f"offset {offset} outside region of {handle.nbytes} bytes")
        raw = self.regions[pe][handle.offset + offset:handle.offset + handle.nbytes]
        arr = raw.view(dtype)
        if shape is not None:
            count = int(np.prod(shape)) if shape else 1
            arr = arr[:count].reshape(shape)
        return arr

    def sig_view(self, sig: SigHandle, pe: int) -> np.ndarray:
        self._check_pe(pe)
        return self.signal_space[pe][sig.base:sig.base + sig.nslots]

    def symm_at(self, handle: SymmHandle, pe: int) -> RemoteRegion:
        """View of `pe`'s copy of a symmetric region (same offset everywhere)."""
        self._check_pe(pe)
        return RemoteRegion(self, handle, pe)

    # remote_ptr and symm_at resolve the same thing; keep one implementation
    remote_ptr = symm_at

    # -------------------------------------------------------- signal plane ops

    def ld(self, sig: SigHandle, idx: int, pe: int, scope: str = "gpu", semantic: str = "acquire") -> int:
        _check_scope_semantic(scope, semantic)
        self._check_slot(sig, idx, 1, pe)
        return int(self.signal_space[pe][sig.base + idx])

    def st(self, sig: SigHandle, idx: int, value: int, pe: int,
           scope: str = "gpu", semantic: str = "relaxed", name: str = "st") -> None:
        _check_scope_semantic(scope, semantic)
        self._check_slot(sig, idx, 1, pe)
        self.signal_space[pe][sig.base + idx] = value
        self._record_signal(name, pe, sig.base + idx, int(value), scope, semantic)
        self.engine.touch([(pe, sig.base + idx)])

    def notify(self, sig: SigHandle, idx: int, pe: int, value: int, semantic: str = "release") -> None:
        self.st(sig, idx, value, pe, scope="sys", semantic=semantic, name="notify")

    def atomic_add(self, sig: SigHandle, idx: int, val: int, pe: int,
                   semantic: str = "release", scope: str = "gpu") -> int:
        _check_scope_semantic(scope, semantic)
        self._check_slot(sig, idx, 1, pe)
        slot = sig.base + idx
        old = int(self.signal_space[pe][slot])
        self.signal_space[pe][slot] = old + val
        self._record_signal("atomic_add", pe, slot, old + val, scope, semantic)
        self.engine.touch([(pe, slot)])
        return old

    def atomic_cas(self, sig: SigHandle, idx: int, cmp: int, val: int, pe: int,
                   semantic: str = "release", scope: str = "gpu") -> int:
        _check_scope_semantic(scope, semantic)
        self._check_slot(sig, idx, 1, pe)
        slot = sig.base + idx
        old = int(self.signal_space[pe][slot])
        if old == cmp:
            self.signal_space[pe][slot] = val
            self._record_signal("atomic_cas", pe, slot, val, scope, semantic)
            self.engine.touch([(pe, slot)])
        return old

    def wait(self, sig: SigHandle, idx: int, num_slots: int, pe: int,
             scope: str = "gpu", semantic: str = "acquire", value: int = 1,
             note: str | None = None):
        """Block until every slot in [idx, idx+num_slots) equals `value`.

        Costs zero simulated time beyond the satisfying write's timestamp.
        Returns a Token. Generator: call as `token = yield from heap.wait(...)`.
        """
        _check_scope_semantic(scope, semantic)
        if num_slots < 1:
            raise ValueError("wait needs num_slots >= 1")
        self._check_slot(sig, idx, num_slots, pe)
        base = sig.base + idx
        space = self.signal_space[pe]

        def check():
            return bool(np.all(space[base:base + num_slots] == value))

        def describe():
            current = space[base:base + num_slots].tolist()
            label = note or "wait"
            return (f"{label}: slots[{base}..{base + num_slots - 1}] on pe {pe} "
                    f"== {value}, currently {current}")

        payload = {"name": note or "wait", "pe": pe, "slot": base, "num_slots": num_slots,
                   "value": int(value), "scope": scope, "semantic": semantic}
        t = yield WaitSlots(check, describe, [(pe, base + i) for i in range(num_slots)], payload)
        return Token(pe=pe, slot=base, num_slots=num_slots, time=t)

    # ---------------------------------------------------------- data plane ops

    def putmem(self, dest: RemoteRegion, dest_off: int, src: np.ndarray, *,
               from_pe: int, note: str = "putmem"):
        """Blocking put: completes (data visible at `dest`) before returning."""
        yield from self._xfer_into(dest.pe, dest.handle, dest_off, src, from_pe, note)

    def getmem(self, dst: np.ndarray, src: RemoteRegion, src_off: int, *,
               from_pe: int, note: str = "getmem"):
        """Blocking get into a local array (often a view of from_pe's region)."""
        nbytes = dst.nbytes
        self._check_range(src.handle, src_off, nbytes)
        yield from self._queue_blocking(nbytes, src.pe, from_pe, note)
        raw = self.regions[src.pe][src.handle.offset + src_off:src.handle.offset + src_off + nbytes]
        np.copyto(dst, raw.view(dst.dtype)[:dst.size].reshape(dst.shape))

    def putmem_strided(self, dest: RemoteRegion, dest_off: int, src2d: np.ndarray,
                       dest_pitch: int, *, from_pe: int, note: str = "putmem"):
        """Blocking put of a 2-D block into rows spaced dest_pitch bytes apart."""
        src2d = np.ascontiguousarray(src2d)
        if src2d.ndim != 2:
            raise ValueError("putmem_strided needs a 2-D source block")
        rows = src2d.shape[0]
        row_nbytes = src2d.shape[1] * src2d.dtype.itemsize
        if rows:
            self._check_range(dest.handle, dest_off, (rows - 1) * dest_pitch + row_nbytes)
        yield from self._queue_blocking(src2d.nbytes, from_pe, dest.pe, note)
        raw = self.regions[dest.pe]
        base = dest.handle.offset + dest_off
        flat = src2d.reshape(rows, -1).view(np.uint8)
        for i in range(rows):
            raw[base + i * dest_pitch:base + i * dest_pitch + row_nbytes] = flat[i]

    def putmem_nbi(self, dest: RemoteRegion, dest_off: int, src: np.ndarray, *,
                   from_pe: int, note: str = "putmem_nbi") -> PendingOp:
        """Non-blocking put; data lands at completion time. Queue order matches
        issue order per worker (copy-engine semantics)."""
        return self._xfer_nbi(dest.pe, dest.handle, dest_off, src, from_pe, note, sig=None)

    def getmem_nbi(self, dst: np.ndarray, src: RemoteRegion, src_off: int, *,
                   from_pe: int, note: str = "getmem_nbi") -> PendingOp:
        """Non-blocking get; `dst` is filled at completion time."""
        w = self.engine._current
        if w is None:
            raise RuntimeError("non-blocking transfers must be issued from a worker")
        nbytes = dst.nbytes
        self._check_range(src.handle, src_off, nbytes)
        cost = self._cost(nbytes, src.pe, from_pe)
        start = max(w.time, self._worker_dma_tail.get(id(w), 0.0))
        end = start + cost
        self._worker_dma_tail[id(w)] = end
        self._rank_xfer_tail[from_pe] = max(self._rank_xfer_tail[from_pe], end)
        self.engine.record("transfer", w.rank, w.name, w.wid, start, end,
                           self._xfer_payload(note, nbytes, src.pe, from_pe))
        region = self.regions[src.pe]
        base = src.handle.offset + src_off

        def commit():
            np.copyto(dst, region[base:base + nbytes].view(dst.dtype)[:dst.size]
                      .reshape(dst.shape))

        self.engine.post(end, commit, rank=w.rank, wid=w.wid)
        return PendingOp(complete_at=end)

    def putmem_signal(self, dest: RemoteRegion, dest_off: int, src: np.ndarray,
                      sig: SigHandle, idx: int, value: int, sig_op: str = "set", *,
                      from_pe: int, note: str = "putmem_signal") -> PendingOp:
        """Non-blocking put; the signal on dest.pe updates no earlier than the
        payload bytes (release ordering on the pair)."""
        if sig_op not in ("set", "add"):
            raise ValueError(f"sig_op must be 'set' or 'add', got {sig_op!r}")
        self._check_slot(sig, idx, 1, dest.pe)
        return self._xfer_nbi(dest.pe, dest.handle, dest_off, src, from_pe, note,
                              sig=(sig, idx, value, sig_op))

    def fence(self, from_pe: int) -> None:
        """Orders prior puts before later puts to the same pe. A no-op here:
        each worker's transfer queue is already serialized in issue order."""
        self._check_pe(from_pe)

    # ------------------------------------------------------------- collectives

    def barrier_all(self, rank: int, note: str = "barrier_all"):
        """All ranks enter; none exits before every prior one-sided op landed."""
        self._check_pe(rank)
        yield Rendezvous(self._barrier_all, self._rank_xfer_tail[rank], {"name": note})

    def sync_all(self, rank: int, note: str = "sync_all"):
        """Rendezvous only; does not flush pending non-blocking puts."""
        self._check_pe(rank)
        yield Rendezvous(self._sync_all, 0.0, {"name": note})

    def node_barrier(self, rank: int, barrier: Barrier, note: str = "node_barrier"):
        """Rendezvous over a caller-managed team barrier (e.g. one node)."""
        yield Rendezvous(barrier, 0.0, {"name": note})

    # ---------------------------------------------------------------- multimem

    def multimem_ld_reduce(self, handle: SymmHandle, offset: int, dtype, count: int, pe: int):
        """Element-wise sum of the node team's copies at a symmetric offset.

        Costs one intra-node transfer of the result vector (the switch reduces
        in-network; each rank receives the vector once). Team of one is a free
        local read. Summation order is ascending team rank.
        """
        dtype = np.dtype(dtype)
        self._check_range(handle, offset, count * dtype.itemsize)
        team = self._node_teams[node_of(pe, self.topology)]
        nbytes = count * dtype.itemsize
        cost = 0.0 if len(team) == 1 else self.engine.cost.xfer_cost(nbytes, "intra")
        yield Advance("transfer", cost, self._xfer_payload("multimem_ld_reduce", nbytes, team[0], pe))
        acc = self.view(handle, team[0], dtype, offset=offset)[:count].copy()
        for r in team[1:]:
            acc += self.view(handle, r, dtype, offset=offset)[:count]
        return acc

    def multimem_st(self, handle: SymmHandle, offset: int, vec: np.ndarray, pe: int):
        """Broadcast a vector into every node-team rank's copy at the offset."""
        vec = np.ascontiguousarray(vec)
        self._check_range(handle, offset, vec.nbytes)
        team = self._node_teams[node_of(pe, self.topology)]
        cost = 0.0 if len(team) == 1 else self.engine.cost.xfer_cost(vec.nbytes, "intra")
        yield Advance("transfer", cost, self._xfer_payload("multimem_st", vec.nbytes, pe, team[0]))
        for r in team:
            self.view(handle, r, vec.dtype, offset=offset)[:vec.size] = vec.reshape(-1)

    def multimem_ld_reduce_block(self, handle: SymmHandle, pe: int, dtype, shape,
                                 row0: int, nrows: int, col0: int, ncols: int):
        """2-D convenience over multimem_ld_reduce: team-sum a row/col block of a
        matrix laid out with `shape` in the region. One transfer charge."""
        dtype = np.dtype(dtype)
        team = self._node_teams[node_of(pe, self.topology)]
        nbytes = nrows * ncols * dtype.itemsize
        cost = 0.0 if len(team) == 1 else self.engine.cost.xfer_cost(nbytes, "intra")
        yield Advance("transfer", cost, self._xfer_payload("multimem_ld_reduce", nbytes, team[0], pe))
        acc = self.view(handle, team[0], dtype, shape)[row0:row0 + nrows, col0:col0 + ncols].copy()
        for r in team[1:]:
            acc += self.view(handle, r, dtype, shape)[row0:row0 + nrows, col0:col0 + ncols]
        return acc

    def multimem_st_block(self, handle: SymmHandle, pe: int, block: np.ndarray, shape,
                          row0: int, col0: int):
        """Broadcast a 2-D block into every node-team rank's copy."""
        team = self._node_teams[node_of(pe, self.topology)]
        cost = 0.0 if len(team) == 1 else self.engine.cost.xfer_cost(block.nbytes, "intra")
        yield Advance("transfer", cost, self._xfer_payload("multimem_st", block.nbytes, pe, team[0]))
        r1, c1 = row0 + block.shape[0], col0 + block.shape[1]
        for r in team:
            self.view(handle, r, block.dtype, shape)[row0:r1, col0:c1] = block

    # ---------------------------------------------------------------- internals

    def _xfer_into(self, dst_pe, handle, dest_off, src, from_pe, note):
        src = np.ascontiguousarray(src)
        nbytes = src.nbytes
        self._check_range(handle, dest_off, nbytes)
        yield from self._queue_blocking(nbytes, from_pe, dst_pe, note)
        raw = self.regions[dst_pe][handle.offset + dest_off:handle.offset + dest_off + nbytes]
        raw[:] = src.reshape(-1).view(np.uint8)

    def _queue_blocking(self, nbytes, src_rank, dst_rank, note):
        # blocking transfers line up behind the worker's outstanding nbi queue
        w = self.engine._current
        if w is None:
            raise RuntimeError("transfers must be issued from a worker")
        tail = self._worker_dma_tail.get(id(w), 0.0)
        if tail > w.time:
            yield Sleep(tail)
        cost = self._cost(nbytes, src_rank, dst_rank)
        yield Advance("transfer", cost, self._xfer_payload(note, nbytes, src_rank, dst_rank))
        self._worker_dma_tail[id(w)] = w.time

    def _xfer_nbi(self, dst_pe, handle, dest_off, src, from_pe, note, sig):
        w = self.engine._current
        if w is None:
            raise RuntimeError("non-blocking transfers must be issued from a worker")
        src = np.ascontiguousarray(src).copy()  # snapshot at issue time
        nbytes = src.nbytes
        self._check_range(handle, dest_off, nbytes)
        cost = self._cost(nbytes, from_pe, dst_pe)
        start = max(w.time, self._worker_dma_tail.get(id(w), 0.0))
        end = start + cost
        self._worker_dma_tail[id(w)] = end
        self._rank_xfer_tail[from_pe] = max(self._rank_xfer_tail[from_pe], end)
        self.engine.record("transfer", w.rank, w.name, w.wid, start, end,
                           self._xfer_payload(note, nbytes, from_pe, dst_pe))
        region = self.regions[dst_pe]
        heap = self

        def commit():
            region[handle.offset + dest_off:handle.offset + dest_off + nbytes] = \
                src.reshape(-1).view(np.uint8)
            if sig is not None:
                s, idx, value, op = sig
                slot = s.base + idx
                if op == "set":
                    heap.signal_space[dst_pe][slot] = value
                else:
                    heap.signal_space[dst_pe][slot] += value
                heap.engine.record("signal", w.rank, w.name, w.wid, heap.engine.now, heap.engine.now,
                                   {"name": "putmem_signal", "pe": dst_pe, "slot": slot,
                                    "value": int(heap.signal_space[dst_pe][slot]),
                                    "scope": "sys", "semantic": "release"})
                heap.engine.touch([(dst_pe, slot)])

        self.engine.post(end, commit, rank=w.rank, wid=w.wid)
        return PendingOp(complete_at=end)

    def _cost(self, nbytes, src_rank, dst_rank):
        return self.engine.cost.xfer_cost(nbytes, self.engine.domain(src_rank, dst_rank))

    def _xfer_payload(self, note, nbytes, src_rank, dst_rank):
        return {"name": note, "bytes": int(nbytes), "src": int(src_rank), "dst": int(dst_rank)}

    def _record_signal(self, name, pe, slot, value, scope, semantic):
        w = self.engine._current
        if w is None:
            self.engine.record("signal", pe, "host", -1, self.engine.now, self.engine.now,
                               {"name": name, "pe": pe, "slot": slot, "value": value,
                                "scope": scope, "semantic": semantic})
        else:
            self.engine.record("signal", w.rank, w.name, w.wid, w.time, w.time,
                               {"name": name, "pe": pe, "slot": slot, "value": value,
                                "scope": scope, "semantic": semantic})

    def _check_pe(self, pe: int):
        if not 0 <= pe < self.topology.world_size:
            raise ValueError(f"pe {pe} out of range [0, {self.topology.world_size})")

    def _check_slot(self, sig: SigHandle, idx: int, n: int, pe: int):
        self._check_pe(pe)
        if idx < 0 or idx + n > sig.nslots:
            raise ValueError(f"signal slots [{idx}, {idx + n}) exceed handle of {sig.nslots}")

    def _check_range(self, handle: SymmHandle, off: int, nbytes: int):
        if off < 0 or off + nbytes > handle.nbytes:
            raise ValueError(f"range [{off}, {off + nbytes}) exceeds region of {handle.nbytes} bytes")
