"""Deterministic discrete-event execution of virtual ranks and SM workers.

Workers are Python generators. They advance simulated time only by yielding
effects (compute, transfer, slot waits, rendezvous); everything between two
yields happens atomically at the worker's current timestamp, which makes the
shared store sequentially consistent by construction. Ties are broken by
(time, rank, worker index, issue sequence), so identical programs produce
byte-identical traces.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .topology import Topology, same_node


@dataclass(frozen=True)
class CostModel:
    """First-order cost model: latency + bytes/bandwidth, flops/rate.

    Same-rank transfers are free (local copies are not modeled). Signal
    stores, loads, and atomics cost zero simulated time.
    """

    flops_rate: float
    intra_node_bw: float
    inter_node_bw: float
    intra_node_lat: float
    inter_node_lat: float

    @classmethod
    def from_topology(cls, topo: Topology) -> "CostModel":
        return cls(topo.flops_rate, topo.intra_node_bw, topo.inter_node_bw,
                   topo.intra_node_lat, topo.inter_node_lat)

    def flop_cost(self, flops: float) -> float:
        return flops / self.flops_rate

    def tile_cost(self, bm: int, bn: int, k: int) -> float:
        return self.flop_cost(2.0 * bm * bn * k)

    def xfer_cost(self, nbytes: int, domain: str) -> float:
        if domain == "self":
            return 0.0
        if domain == "intra":
            return self.intra_node_lat + nbytes / self.intra_node_bw
        if domain == "inter":
            return self.inter_node_lat + nbytes / self.inter_node_bw
        raise ValueError(f"unknown transfer domain {domain!r}")


@dataclass(frozen=True)
class TraceEvent:
    rank: int
    worker: str
    worker_id: int
    kind: str  # compute | transfer | wait | signal | barrier
    t_start: float
    t_end: float
    payload: dict


@dataclass
class Trace:
    events: list[TraceEvent] = field(default_factory=list)
    seed: int = 0

    def by_kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]


class DeadlockError(RuntimeError):
    """No runnable worker remains while waits are outstanding."""

    def __init__(self, blocked: list[dict]):
        self.blocked = blocked
        lines = [f"deadlock: {len(blocked)} worker(s) blocked"]
        for b in blocked:
            lines.append(f"  rank {b['rank']} worker {b['worker']}: {b['detail']}")
        super().__init__("\n".join(lines))


# Effects yielded by workers. Internal to this module and shmem.

@dataclass
class Advance:
    kind: str  # "compute" or "transfer"
    duration: float
    payload: dict


@dataclass
class WaitSlots:
    check: Callable[[], bool]
    describe: Callable[[], str]
    watch_keys: list  # (pe, slot) pairs; any store there re-checks
    payload: dict


@dataclass
class Rendezvous:
    barrier: "Barrier"
    min_time: float  # arrive no earlier than this (quiet semantics)
    payload: dict


@dataclass
class Sleep:
    until: float


class Barrier:
    """Generation-counted rendezvous for `parties` workers."""

    def __init__(self, name: str, parties: int):
        self.name = name
        self.parties = parties
        self.waiting = []  # (worker, arrive_time)

    def full(self) -> bool:
        return len(self.waiting) >= self.parties


class _Worker:
    __slots__ = ("rank", "name", "wid", "gen", "time", "blocked", "park_time",
                 "pending_check", "send_value", "done")

    def __init__(self, rank, name, wid, gen):
        self.rank = rank
        self.name = name
        self.wid = wid
        self.gen = gen
        self.time = 0.0
        self.blocked = None  # active WaitSlots / Rendezvous
        self.park_time = 0.0
        self.pending_check = False
        self.send_value = None
        self.done = False


class Engine:
    """Event loop owning worker lifecycles, timestamps, and the trace."""

    def __init__(self, topology: Topology, cost_model: CostModel | None = None, seed: int = 0):
        self.topology = topology
        self.cost = cost_model or CostModel.from_topology(topology)
        self.seed = seed
        self.now = 0.0
        self._queue = []  # (time, rank, wid, seq, item); item: _Worker or callable
        self._seq = 0
        self._workers: list[_Worker] = []
        self._watchers: dict[tuple, list[_Worker]] = {}
        self._trace = Trace(seed=seed)
        self._ran = False
        self._current: _Worker | None = None

    # -- setup ---------------------------------------------------------------

    def spawn(self, rank: int, name: str, gen) -> None:
        if self._ran:
            raise RuntimeError("engine already ran; build a fresh Engine per run")
        w = _Worker(rank, name, len(self._workers), gen)
        self._workers.append(w)
        self._push(0.0, w)

    def make_barrier(self, name: str, parties: int) -> Barrier:
        return Barrier(name, parties)

    # -- helpers usable from workers ------------------------------------------

    def compute(self, flops: float, **payload):
        """Charge flops at the cost model's rate; records a compute event."""
        yield Advance("compute", self.cost.flop_cost(flops), payload)

    def compute_tile(self, bm: int, bn: int, k: int, **payload):
        yield Advance("compute", self.cost.tile_cost(bm, bn, k), payload)

    def domain(self, src_rank: int, dst_rank: int) -> str:
        if src_rank == dst_rank:
            return "self"
        return "intra" if same_node(src_rank, dst_rank, self.topology) else "inter"

    # -- bookkeeping used by shmem ---------------------------------------------

    def record(self, kind: str, rank: int, worker: str, wid: int,
               t_start: float, t_end: float, payload: dict) -> None:
        self._trace.events.append(TraceEvent(rank, worker, wid, kind, t_start, t_end, payload))

    def post(self, time: float, fn: Callable[[], None], rank: int, wid: int) -> None:
        """Run `fn` at `time` (used for non-blocking transfer commits)."""
        self._push(max(time, self.now), fn, rank=rank, wid=wid)

    def touch(self, keys: Iterable[tuple]) -> None:
        """A store hit these (pe, slot) keys; schedule re-checks for watchers."""
        for key in keys:
            for w in self._watchers.get(key, ()):
                if not w.pending_check:
                    w.pending_check = True
                    self._push(self.now, w)

    # -- event loop -------------------------------------------------------------

    def _push(self, time, item, rank=None, wid=None):
        if isinstance(item, _Worker):
            rank, wid = item.rank, item.wid
        self._seq += 1
        # seq is unique, so heap tuples never compare `item` itself
        heapq.heappush(self._queue, (time, rank, wid, self._seq, item))

    def run(self) -> Trace:
        if self._ran:
            raise RuntimeError("engine already ran")
        self._ran = True
        while self._queue:
            time, _rank, _wid, _seq, item = heapq.heappop(self._queue)
            self.now = time
            if not isinstance(item, _Worker):
                self._current = None
                item()  # posted commit callback
                continue
            w = item
            if w.done:
                continue
            if w.blocked is not None:
                self._recheck(w)
                continue
            w.time = time
            self._step(w)
        blocked = [w for w in self._workers if not w.done and w.blocked is not None]
        if blocked:
            raise DeadlockError([self._diagnose(w) for w in blocked])
        return self._trace

    def _step(self, w: _Worker):
        self._current = w
        while True:
            try:
                eff = w.gen.send(w.send_value)
            except StopIteration:
                w.done = True
                return
            w.send_value = None
            if isinstance(eff, Advance):
                t0 = w.time
                t1 = t0 + eff.duration
                self.record(eff.kind, w.rank, w.name, w.wid, t0, t1, eff.payload)
                if eff.duration <= 0.0:
                    w.time = t1
                    continue  # no need to round-trip through the queue
                w.time = t1
                self._push(t1, w)
                return
            if isinstance(eff, Sleep):
                if eff.until <= w.time:
                    continue
                w.time = eff.until
                self._push(eff.until, w)
                return
            if isinstance(eff, WaitSlots):
                if eff.check():
                    self.record("wait", w.rank, w.name, w.wid, w.time, w.time, eff.payload)
                    w.send_value = w.time
                    continue
                w.blocked = eff
                w.park_time = w.time
                for key in eff.watch_keys:
                    self._watchers.setdefault(key, []).append(w)
                return
            if isinstance(eff, Rendezvous):
                w.time = max(w.time, eff.min_time)
                bar = eff.barrier
                bar.waiting.append((w, w.time, eff.payload))
                w.blocked = eff
                w.park_time = w.time
                if bar.full():
                    release = max(t for _, t, _ in bar.waiting)
                    members = bar.waiting
                    bar.waiting = []
                    for member, t_arrive, payload in members:
                        member.blocked = None
                        member.time = release
                        member.send_value = release
                        self.record("barrier", member.rank, member.name, member.wid,
                                    t_arrive, release, payload)
                        self._push(release, member)
                return
            raise TypeError(f"worker {w.name} yielded unsupported effect {eff!r}")

    def _recheck(self, w: _Worker):
        eff = w.blocked
        if isinstance(eff, Rendezvous):
            return  # barriers are released by the last arriver, not by touch
        w.pending_check = False
        if not eff.check():
            return
        for key in eff.watch_keys:
            lst = self._watchers.get(key)
            if lst is not None and w in lst:
                lst.remove(w)
        w.blocked = None
        w.time = max(w.park_time, self.now)
        self.record("wait", w.rank, w.name, w.wid, w.park_time, w.time, eff.payload)
        w.send_value = w.time
        self._step(w)

    def _diagnose(self, w: _Worker) -> dict:
        eff = w.blocked
        if isinstance(eff, Rendezvous):
            detail = f"barrier '{eff.barrier.name}' stuck at {len(eff.barrier.waiting)}/{eff.barrier.parties}"
        else:
            detail = eff.describe()
        return {"rank": w.rank, "worker": w.name, "detail": detail}


# -- trace analysis -----------------------------------------------------------


def makespan(trace: Trace) -> float:
    """End-to-end simulated duration (0 for an empty trace)."""
    if not trace.events:
        return 0.0
    return max(e.t_end for e in trace.events)


def overlap_report(trace: Trace) -> dict:
    """Aggregate compute/communication totals and the hidden fraction.

    hidden_fraction = 1 - (makespan - compute_critical_path) / comm_total,
    clamped to [0, 1], where compute_critical_path is the busiest compute
    worker's total busy time. A trace with no transfers reports 1.0.
    """
    compute_total = 0.0
    comm_total = 0.0
    per_worker_compute: dict[int, float] = {}
    for e in trace.events:
        if e.kind == "compute":
            d = e.t_end - e.t_start
            compute_total += d
            per_worker_compute[e.worker_id] = per_worker_compute.get(e.worker_id, 0.0) + d
        elif e.kind == "transfer":
            comm_total += e.t_end - e.t_start
    span = makespan(trace)
    critical = max(per_worker_compute.values(), default=0.0)
    if comm_total <= 0.0:
        hidden = 1.0
    else:
        hidden = 1.0 - (span - critical) / comm_total
        hidden = min(1.0, max(0.0, hidden))
    return {
        "compute_total": compute_total,
        "comm_total": comm_total,
        "makespan": span,
        "hidden_fraction": hidden,
    }


def format_overlap_report(report: dict) -> str:
    rows = [
        ("compute_total", f"{report['compute_total'] * 1e6:12.3f} us"),
        ("comm_total", f"{report['comm_total'] * 1e6:12.3f} us"),
        ("makespan", f"{report['makespan'] * 1e6:12.3f} us"),
        ("hidden_fraction", f"{report['hidden_fraction']:12.4f}"),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def export_chrome_trace(trace: Trace, path) -> None:
    """Write the trace as a Chrome 'X' duration-event JSON array (ts/dur in us)."""
    events = []
    for e in trace.events:
        name = e.payload.get("name", e.kind)
        events.append({
            "name": str(name),
            "cat": e.kind,
            "ph": "X",
            "ts": e.t_start * 1e6,
            "dur": (e.t_end - e.t_start) * 1e6,
            "pid": e.rank,
            "tid": e.worker_id,
            "args": {k: v for k, v in sorted(e.payload.items()) if k != "name"},
        })
    body = json.dumps(events, separators=(",", ":"), sort_keys=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(body)


def run_simulation(program, topology: Topology, cost_model: CostModel | None = None,
                   seed: int = 0, heap_bytes: int = 1 << 24, signal_slots: int = 1 << 14):
    """Run `program(sim)` to completion and return (outputs, trace).

    `program` receives a SimContext, spawns workers on sim.engine, and returns
    either None or a zero-argument callable evaluated after the run to collect
    outputs. Deadlocks raise DeadlockError listing every blocked wait.
    """
    from .shmem import SymmetricHeap  # local import to avoid a cycle

    engine = Engine(topology, cost_model, seed)
    heap = SymmetricHeap(topology, engine, data_bytes=heap_bytes, signal_slots=signal_slots)
    collect = program(SimContext(engine=engine, heap=heap, topology=topology))
    trace = engine.run()
    outputs = collect() if callable(collect) else None
    return outputs, trace


@dataclass
class SimContext:
    engine: Engine
    heap: object
    topology: Topology
