import json

import numpy as np
import pytest

from overlapsim.shmem import SymmetricHeap
from overlapsim.simengine import (
    CostModel,
    DeadlockError,
    Engine,
    Trace,
    TraceEvent,
    export_chrome_trace,
    makespan,
    overlap_report,
)
from overlapsim.topology import build_topology


def ev(kind, t0, t1, rank=0, worker="w", wid=0, **payload):
    return TraceEvent(rank, worker, wid, kind, t0, t1, payload)


def test_empty_trace_makespan_zero():
    trace = Trace()
    assert makespan(trace) == 0.0
    rep = overlap_report(trace)
    assert rep["makespan"] == 0.0 and rep["compute_total"] == 0.0


def test_cost_model_values():
    topo = build_topology(8, 2, flops_rate=1e12)
    cost = CostModel.from_topology(topo)
    # one tile: 2 * Bm * Bn * K flops
    assert cost.tile_cost(64, 64, 128) == pytest.approx(2 * 64 * 64 * 128 / 1e12)
    # 200e9 bytes over the 200 GB/s intra-node link is about a second
    assert cost.xfer_cost(200 * 10 ** 9, "intra") == pytest.approx(1.0 + 1e-6)
    assert cost.xfer_cost(50 * 10 ** 9, "inter") == pytest.approx(1.0 + 5e-6)
    assert cost.xfer_cost(12345, "self") == 0.0
    assert cost.xfer_cost(0, "intra") == pytest.approx(1e-6)  # latency only


def test_single_tile_compute_event():
    topo = build_topology(1, 1, flops_rate=1e9)
    engine = Engine(topo)

    def worker():
        yield from engine.compute_tile(16, 16, 32, name="t")

    engine.spawn(0, "sm0", worker())
    trace = engine.run()
    (e,) = trace.by_kind("compute")
    assert e.t_end - e.t_start == pytest.approx(2 * 16 * 16 * 32 / 1e9)
    assert makespan(trace) == pytest.approx(e.t_end)


def test_overlap_report_serial_and_shadowed():
    serial = Trace(events=[ev("compute", 0.0, 10.0, wid=0), ev("transfer", 10.0, 14.0, wid=1)])
    rep = overlap_report(serial)
    assert rep["hidden_fraction"] == 0.0
    shadowed = Trace(events=[ev("compute", 0.0, 10.0, wid=0), ev("transfer", 2.0, 5.0, wid=1)])
    assert overlap_report(shadowed)["hidden_fraction"] == 1.0
    no_comm = Trace(events=[ev("compute", 0.0, 1.0)])
    assert overlap_report(no_comm)["hidden_fraction"] == 1.0


def test_conservation_busy_time():
    topo = build_topology(2, 1)
    engine = Engine(topo)
    heap = SymmetricHeap(topo, engine, data_bytes=1 << 16, signal_slots=8)
    h = heap.alloc(1 << 12)

    def worker(rank):
        yield from engine.compute(1e6, name="c")
        yield from heap.putmem(heap.symm_at(h, 1 - rank), 0,
                               np.ones(64, np.int64), from_pe=rank)

    engine.spawn(0, "a", worker(0))
    engine.spawn(1, "b", worker(1))
    trace = engine.run()
    busy = {}
    for e in trace.events:
        busy[e.worker_id] = busy.get(e.worker_id, 0.0) + (e.t_end - e.t_start)
    assert sum(busy.values()) <= len(busy) * makespan(trace) + 1e-12


def test_wait_resumes_at_satisfying_write_time():
    topo = build_topology(2, 1)
    engine = Engine(topo)
    heap = SymmetricHeap(topo, engine, data_bytes=1 << 16, signal_slots=8)
    h = heap.alloc(1 << 10)
    sig = heap.alloc_signals(1)
    times = {}

    def producer():
        yield from engine.compute(5e5, name="work")  # finishes at t=0.5us w/ 1e12
        pending = heap.putmem_signal(heap.symm_at(h, 1), 0, np.arange(8, dtype=np.int64),
                                     sig, 0, 1, "set", from_pe=0)
        times["commit"] = pending.complete_at

    def consumer():
        token = yield from heap.wait(sig, 0, 1, pe=1, value=1)
        times["resume"] = token.time
        assert heap.view(h, 1, np.int64)[:8].tolist() == list(range(8))

    engine.spawn(0, "p", producer())
    engine.spawn(1, "c", consumer())
    trace = engine.run()
    assert times["resume"] == pytest.approx(times["commit"])
    (w,) = [e for e in trace.by_kind("wait") if e.rank == 1]
    assert w.t_start == 0.0 and w.t_end == pytest.approx(times["commit"])


def test_deadlock_reports_blocked_wait():
    topo = build_topology(1, 1)
    engine = Engine(topo)
    heap = SymmetricHeap(topo, engine, data_bytes=1 << 10, signal_slots=4)
    sig = heap.alloc_signals(2)

    def stuck():
        yield from heap.wait(sig, 1, 1, pe=0, value=7, note="never_satisfied")

    engine.spawn(0, "lost", stuck())
    with pytest.raises(DeadlockError) as exc:
        engine.run()
    msg = str(exc.value)
    assert "never_satisfied" in msg and "== 7" in msg
    assert exc.value.blocked[0]["worker"] == "lost"


def test_chrome_trace_export(tmp_path):
    path = tmp_path / "empty.json"
    export_chrome_trace(Trace(), path)
    assert path.read_text() == "[]"
    one = Trace(events=[ev("compute", 0.0, 2e-6, name="tile")])
    path2 = tmp_path / "one.json"
    export_chrome_trace(one, path2)
    data = json.loads(path2.read_text())
    assert len(data) == 1
    assert data[0]["ph"] == "X" and data[0]["name"] == "tile"
    assert data[0]["ts"] == 0.0 and data[0]["dur"] == pytest.approx(2.0)
    assert data[0]["pid"] == 0 and data[0]["tid"] == 0


def test_identical_runs_identical_trace_bytes(tmp_path):
    from overlapsim.kernels import WorkloadContext, ag_gemm

    rng = np.random.default_rng(7)
    a = [rng.integers(-4, 4, (8, 4)).astype(np.int64) for _ in range(2)]
    b = [rng.integers(-4, 4, (6, 4)).astype(np.int64) for _ in range(2)]
    topo = build_topology(2, 1, num_sms=4)
    blobs = []
    for i in range(2):
        ctx = WorkloadContext(topology=topo, block_m=4, block_n=4, block_k=4,
                              group_m=2, seed=11)
        run = ag_gemm(a, b, ctx)
        path = tmp_path / f"run{i}.json"
        export_chrome_trace(run.trace, path)
        blobs.append(path.read_bytes())
    assert blobs[0] == blobs[1]


def test_run_simulation_wrapper():
    from overlapsim.simengine import run_simulation

    topo = build_topology(2, 1)

    def program(sim):
        h = sim.heap.alloc(64)
        sig = sim.heap.alloc_signals(1)

        def sender():
            yield from sim.heap.putmem(sim.heap.symm_at(h, 1), 0,
                                       np.full(4, 9, np.int64), from_pe=0)
            sim.heap.notify(sig, 0, pe=1, value=1)

        def receiver():
            yield from sim.heap.wait(sig, 0, 1, pe=1, value=1)

        sim.engine.spawn(0, "s", sender())
        sim.engine.spawn(1, "r", receiver())
        return lambda: sim.heap.view(h, 1, np.int64)[:4].copy()

    outputs, trace = run_simulation(program, topo, seed=5)
    assert outputs.tolist() == [9, 9, 9, 9]
    assert trace.seed == 5 and trace.events


def test_empty_program_run_simulation():
    from overlapsim.simengine import run_simulation

    outputs, trace = run_simulation(lambda sim: None, build_topology(1, 1))
    assert outputs is None and not trace.events and makespan(trace) == 0.0


def test_causality_no_wait_ends_before_release():
    # in any kernel trace, a satisfied wait never ends before the signal that
    # could satisfy it was written; spot-check with a two-rank ping
    topo = build_topology(2, 1)
    engine = Engine(topo)
    heap = SymmetricHeap(topo, engine, data_bytes=1 << 10, signal_slots=2)
    sig = heap.alloc_signals(1)

    def pinger():
        yield from engine.compute(1e6, name="delay")
        heap.notify(sig, 0, pe=1, value=1)

    def ponger():
        yield from heap.wait(sig, 0, 1, pe=1, value=1)

    engine.spawn(0, "ping", pinger())
    engine.spawn(1, "pong", ponger())
    trace = engine.run()
    (sig_ev,) = [e for e in trace.by_kind("signal") if e.payload.get("name") == "notify"]
    (wait_ev,) = trace.by_kind("wait")
    assert wait_ev.t_end >= sig_ev.t_end
