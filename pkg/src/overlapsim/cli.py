"""Command-line front end: run workloads, verify against references, sweep
configurations, and render swizzle maps.

Exit codes: 0 success, 1 verification mismatch, 2 usage or config error.
All state comes from flags and the optional config file; identical inputs
reproduce identical traces.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import load_config
from .errors import ConfigError
from .kernels import (
    WorkloadContext,
    ag_gemm,
    ag_moe_group_gemm,
    gemm_allreduce,
    gemm_rs,
    ref_allgather_gemm,
    ref_allreduce,
    ref_group_gemm,
    ref_reduce_scatter,
)
from .megakernel import MegaProgram, run_megakernel
from .simengine import export_chrome_trace, format_overlap_report, makespan, overlap_report
from .swizzle import SwizzleParams, render_swizzle_map
from .topology import LINK_PROFILES, build_topology

WORKLOADS = ("ag_gemm", "gemm_rs", "gemm_ar", "ag_moe", "mega")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="overlapsim",
                                description="desk-scale overlapped-workload simulator")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "execute a workload, print the overlap report"),
        ("verify", "execute and compare against the sequential reference"),
        ("sweep", "run a grid of configurations and tabulate the results"),
        ("swizzle-map", "print the tile execution order per rank"),
    ):
        sp = sub.add_parser(name, help=help_text)
        _add_common(sp)
    return p


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="flat key-value config file; flags override it")
    sp.add_argument("--workload", choices=WORKLOADS)
    sp.add_argument("--world-size", type=int, dest="world_size")
    sp.add_argument("--nnodes", type=int)
    sp.add_argument("--profile", choices=sorted(LINK_PROFILES))
    sp.add_argument("--m", type=int)
    sp.add_argument("--n", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--experts", type=int)
    sp.add_argument("--topk", type=int)
    sp.add_argument("--block-m", type=int, dest="block_m")
    sp.add_argument("--block-n", type=int, dest="block_n")
    sp.add_argument("--block-k", type=int, dest="block_k")
    sp.add_argument("--group-m", type=int, dest="group_m")
    sp.add_argument("--gemm-sms", type=int, dest="gemm_sms")
    sp.add_argument("--comm-sms", type=int, dest="comm_sms")
    sp.add_argument("--num-sms", type=int, dest="num_sms")
    sp.add_argument("--flops-rate", type=float, dest="flops_rate")
    sp.add_argument("--swizzle", choices=("on", "off"))
    sp.add_argument("--mode", choices=("exact", "float"))
    sp.add_argument("--reduce-order", choices=("ring", "ascending"), dest="reduce_order")
    sp.add_argument("--fuse-scatter", action="store_const", const=True, dest="fuse_scatter")
    sp.add_argument("--multimem-st", action="store_const", const=True, dest="multimem_st")
    sp.add_argument("--scale", type=int)
    sp.add_argument("--trace-out", dest="trace_out")
    sp.add_argument("--seed", type=int)


DEFAULTS = {
    "workload": "ag_gemm", "world_size": 4, "nnodes": 1, "profile": "h800",
    "m": 1024, "n": 1024, "k": 512, "experts": 4, "topk": 2,
    "block_m": 64, "block_n": 64, "block_k": 64, "group_m": 4,
    "gemm_sms": 2, "comm_sms": 1, "num_sms": 8, "flops_rate": 1e12,
    "swizzle": "on", "mode": "exact", "reduce_order": "ring",
    "fuse_scatter": False, "multimem_st": False, "scale": 1,
    "trace_out": None, "seed": 0,
}


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        loaded = load_config(args.config)
        flat = {}
        for key, value in loaded.items():
            if isinstance(value, dict):
                flat.update(value)  # sections are just namespaces
            else:
                flat[key] = value
        unknown = set(flat) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(flat)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["swizzle"] in ("on", "off"):
        cfg["swizzle"] = cfg["swizzle"] == "on"
    if cfg["mode"] not in ("exact", "float"):
        raise ConfigError(f"mode must be exact or float, got {cfg['mode']!r}")
    if cfg["scale"] < 1:
        raise ConfigError("--scale must be >= 1")
    return cfg


def _round_down(value: int, multiple: int) -> int:
    return max(multiple, (value // multiple) * multiple)


def apply_scale(cfg: dict) -> dict:
    """Divide the problem shape by --scale, flooring to block multiples so the
    reference shapes stay citable while runs remain desk-sized."""
    s = cfg["scale"]
    out = dict(cfg)
    out["m"] = _round_down(cfg["m"] // s, cfg["block_m"] * cfg["world_size"])
    out["n"] = _round_down(cfg["n"] // s, cfg["block_n"])
    out["k"] = _round_down(cfg["k"] // s, cfg["block_k"])
    return out


def make_topology(cfg: dict):
    return build_topology(cfg["world_size"], cfg["nnodes"],
                          LINK_PROFILES[cfg["profile"]],
                          flops_rate=cfg["flops_rate"], num_sms=cfg["num_sms"])


def make_context(cfg: dict) -> WorkloadContext:
    return WorkloadContext(
        topology=make_topology(cfg),
        block_m=cfg["block_m"], block_n=cfg["block_n"], block_k=cfg["block_k"],
        group_m=cfg["group_m"], num_gemm_sms=cfg["gemm_sms"], num_comm_sms=cfg["comm_sms"],
        fuse_scatter=cfg["fuse_scatter"], use_multimem_st=cfg["multimem_st"],
        swizzle=cfg["swizzle"], reduce_order=cfg["reduce_order"], seed=cfg["seed"])


def _rng(cfg):
    return np.random.default_rng(cfg["seed"])


def _rand(rng, shape, mode):
    if mode == "exact":
        return rng.integers(-8, 8, size=shape).astype(np.int64)
    return rng.standard_normal(size=shape).astype(np.float32)


def build_inputs(cfg: dict):
    """Seeded operands plus the matching reference callable per workload."""
    rng = _rng(cfg)
    world = cfg["world_size"]
    mode = cfg["mode"]
    m, n, k = cfg["m"], cfg["n"], cfg["k"]
    wl = cfg["workload"]
    if wl == "ag_gemm":
        if m % world or n % world:
            raise ConfigError(f"M={m} and N={n} must be divisible by world_size={world}")
        a = [_rand(rng, (m // world, k), mode) for _ in range(world)]
        b = [_rand(rng, (n // world, k), mode) for _ in range(world)]
        return (a, b), lambda: ref_allgather_gemm(a, b)
    if wl == "gemm_rs":
        if m % world:
            raise ConfigError(f"M={m} must be divisible by world_size={world}")
        inp = [_rand(rng, (m, k), mode) for _ in range(world)]
        w = [_rand(rng, (n, k), mode) for _ in range(world)]
        return (inp, w), lambda: ref_reduce_scatter(inp, w)
    if wl == "gemm_ar":
        a = [_rand(rng, (m, k), mode) for _ in range(world)]
        b = [_rand(rng, (n, k), mode) for _ in range(world)]
        return (a, b), lambda: [ref_allreduce(a, b)] * world
    if wl == "ag_moe":
        if n % world:
            raise ConfigError(f"N={n} must be divisible by world_size={world}")
        routing = _route_tokens(rng, m, world, cfg["experts"], cfg["topk"])
        toks = [_rand(rng, (int(routing[r].sum()), k), mode) for r in range(world)]
        wts = [[_rand(rng, (n // world, k), mode) for _ in range(cfg["experts"])]
               for _ in range(world)]
        return (toks, wts, routing), lambda: ref_group_gemm(toks, wts, routing)
    raise ConfigError(f"unsupported workload {cfg['workload']!r}")


def _route_tokens(rng, tokens, world, experts, topk):
    if topk > experts:
        raise ConfigError(f"topk={topk} exceeds experts={experts}")
    routing = np.zeros((world, experts), dtype=np.int64)
    per_rank = max(1, tokens // world)
    for r in range(world):
        for _ in range(per_rank):
            for e in rng.choice(experts, size=topk, replace=False):
                routing[r, e] += 1
    return routing


def execute(cfg: dict):
    """Run the configured workload; returns (outputs, reference_fn, run)."""
    wl = cfg["workload"]
    if wl == "mega":
        return _execute_mega(cfg)
    operands, ref_fn = build_inputs(cfg)
    ctx = make_context(cfg)
    if wl == "ag_gemm":
        run = ag_gemm(*operands, ctx)
    elif wl == "gemm_rs":
        run = gemm_rs(*operands, ctx)
    elif wl == "gemm_ar":
        run = gemm_allreduce(*operands, ctx)
    else:
        run = ag_moe_group_gemm(*operands, ctx)
    return run.outputs, ref_fn, run


def _execute_mega(cfg: dict):
    rng = _rng(cfg)
    mode = cfg["mode"]
    m, n, k = cfg["m"], cfg["n"], cfg["k"]
    topo = make_topology(cfg)
    prog = MegaProgram(topo)
    x = prog.tensor("x", (m, k), np.int64 if mode == "exact" else np.float32)
    w1 = prog.tensor("w1", (n, k), x.dtype)
    h1 = prog.tensor("h1", (m, n), x.dtype)
    bias = prog.tensor("bias", (m, n), x.dtype)
    h2 = prog.tensor("h2", (m, n), x.dtype)
    w2 = prog.tensor("w2", (k, n), x.dtype)
    y = prog.tensor("y", (m, k), x.dtype)
    prog.layer("linear", [x, w1], [h1], block_m=cfg["block_m"], block_n=cfg["block_n"])
    prog.layer("add", [h1, bias], [h2], block_rows=cfg["block_m"])
    prog.layer("linear", [h2, w2], [y], block_m=cfg["block_m"], block_n=cfg["block_n"])
    built = prog.build()
    vals = {name: _rand(rng, by.shape, mode)
            for name, by in (("x", x), ("w1", w1), ("bias", bias), ("w2", w2))}
    run = run_megakernel(prog, built, num_sms=min(cfg["gemm_sms"] + cfg["comm_sms"],
                                                  topo.num_sms),
                         inputs=vals, seed=cfg["seed"])

    def ref_fn():
        seq = (vals["x"] @ vals["w1"].T + vals["bias"]) @ vals["w2"].T
        return [seq] * topo.world_size

    return run.outputs["y"], ref_fn, run


def compare(outputs, reference, mode: str):
    """Returns (ok, max_abs_err, max_rel_err).

    Float relative error is measured in the max norm (largest |diff| over the
    largest |reference| entry); element-wise ratios are meaningless where the
    reference crosses zero.
    """
    max_abs = 0.0
    max_rel = 0.0
    for got, want in zip(outputs, reference):
        if got.shape != want.shape:
            return False, float("inf"), float("inf")
        want64 = np.asarray(want, dtype=np.float64)
        diff = float(np.abs(np.asarray(got, dtype=np.float64) - want64).max(initial=0.0))
        scale = float(np.abs(want64).max(initial=0.0)) or 1.0
        max_abs = max(max_abs, diff)
        max_rel = max(max_rel, diff / scale)
    ok = max_abs == 0.0 if mode == "exact" else max_rel <= 1e-5
    return ok, max_abs, max_rel


def cmd_run(cfg: dict) -> int:
    cfg = apply_scale(cfg)
    _, _, run = execute(cfg)
    report = overlap_report(run.trace)
    print(f"workload={cfg['workload']} world={cfg['world_size']} nnodes={cfg['nnodes']} "
          f"M={cfg['m']} N={cfg['n']} K={cfg['k']} swizzle={'on' if cfg['swizzle'] else 'off'} "
          f"mode={cfg['mode']}")
    print(format_overlap_report(report))
    if cfg["trace_out"]:
        export_chrome_trace(run.trace, cfg["trace_out"])
        print(f"trace written to {cfg['trace_out']}")
    return 0


def cmd_verify(cfg: dict) -> int:
    cfg = apply_scale(cfg)
    outputs, ref_fn, run = execute(cfg)
    ok, max_abs, max_rel = compare(outputs, ref_fn(), cfg["mode"])
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {cfg['workload']} world={cfg['world_size']} mode={cfg['mode']} "
          f"max_abs={max_abs:.3e} max_rel={max_rel:.3e}")
    if cfg["trace_out"]:
        export_chrome_trace(run.trace, cfg["trace_out"])
    return 0 if ok else 1


def cmd_sweep(cfg: dict) -> int:
    workloads = [cfg["workload"]] if cfg.get("_workload_set") else list(WORKLOADS[:-1])
    rows = []
    for wl in workloads:
        for swz in (True, False):
            sub = dict(cfg, workload=wl, swizzle=swz)
            sub = apply_scale(sub)
            try:
                _, _, run = execute(sub)
            except (ConfigError, ValueError) as e:
                rows.append((wl, f"{sub['m']}x{sub['n']}x{sub['k']}",
                             "on" if swz else "off", "-", f"error: {e}"))
                continue
            rep = overlap_report(run.trace)
            rows.append((wl, f"{sub['m']}x{sub['n']}x{sub['k']}", "on" if swz else "off",
                         f"{rep['hidden_fraction']:.4f}", f"{rep['makespan'] * 1e6:.2f}us"))
    header = ("workload", "shape", "swizzle", "hidden_fraction", "makespan")
    widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(5)]
    for row in [header] + rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))
    return 0


def cmd_swizzle_map(cfg: dict) -> int:
    cfg = apply_scale(cfg)
    mode = "gemm_rs" if cfg["workload"] == "gemm_rs" else "ag_gemm"
    params = SwizzleParams(
        m=cfg["m"], n=cfg["n"], k=cfg["k"], block_size_m=cfg["block_m"],
        block_size_n=cfg["block_n"], block_size_k=cfg["block_k"],
        group_size_m=cfg["group_m"], rank=0, world_size=cfg["world_size"],
        nnodes=cfg["nnodes"])
    print(render_swizzle_map(params, mode))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        cfg["_workload_set"] = args.workload is not None or (
            args.config and "workload" in load_config(args.config))
        command = {
            "run": cmd_run,
            "verify": cmd_verify,
            "sweep": cmd_sweep,
            "swizzle-map": cmd_swizzle_map,
        }[args.command]
        return command(cfg)
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
