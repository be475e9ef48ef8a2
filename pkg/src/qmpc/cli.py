"""Command-line benchmarks, single-op runs, graph listings and a self-test.

Every command prints one JSON report per line::

    {cmd, params, comm: {pairs, rounds, total_bytes}, phases: [{name, bytes}],
     est_time: {lan, wan}, checks: [{name, pass, value}]}

and exits non-zero when any check fails.  ``DITTO_SEED`` overrides ``--seed``.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import nonlinear as nl
from . import oracle
from .fxp import HIGH, LOW, decode, encode, plain_trunc
from .graph import Graph, PrecisionMap, compile_graph, dump, execute, softmax_dag, validate
from .model import BlockConfig, build_block, load_weights, random_weights
from .rss import Runtime, matmul_trunc, msb, mul, trunc
from .transport import LAN, WAN, CommStats, estimate_time
from .typecast import downcast, upcast

SEED_ENV = "DITTO_SEED"
RATIO_TARGET = 0.67


def resolve_seed(seed: int) -> int:
    env = os.environ.get(SEED_ENV)
    return int(env) if env not in (None, "") else seed


def phase_totals(stats: CommStats, depth: int = 1) -> list:
    agg = defaultdict(int)
    for name, nbytes in stats.phase_bytes.items():
        agg["/".join(name.split("/")[:depth]) or "-"] += nbytes
    return [{"name": k, "bytes": v} for k, v in sorted(agg.items())]


def make_report(cmd: str, params: dict, stats: CommStats | None, checks: list, depth: int = 1, **extra) -> dict:
    stats = stats or CommStats()
    comm = stats.to_dict()
    comm["total_bytes"] = stats.total_bytes
    report = {
        "cmd": cmd,
        "params": params,
        "comm": comm,
        "phases": phase_totals(stats, depth),
        "est_time": {"lan": estimate_time(stats, LAN), "wan": estimate_time(stats, WAN)},
        "checks": checks,
    }
    report.update(extra)
    return report


def check(name: str, ok: bool, value=None) -> dict:
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    return {"name": name, "pass": bool(ok), "value": value}


def flatten(report: dict) -> dict:
    """One flat row per report for CSV export."""
    row = {"cmd": report["cmd"]}
    for k, v in report["params"].items():
        row[f"params.{k}"] = v
    row["comm.rounds"] = report["comm"]["rounds"]
    row["comm.total_bytes"] = report["comm"]["total_bytes"]
    for pair, d in report["comm"]["pairs"].items():
        row[f"comm.{pair}.bytes"] = d["bytes"]
    for ph in report["phases"]:
        row[f"phases.{ph['name']}"] = ph["bytes"]
    for k, v in report["est_time"].items():
        row[f"est_time.{k}"] = v
    for c in report["checks"]:
        row[f"checks.{c['name']}.pass"] = c["pass"]
        row[f"checks.{c['name']}.value"] = c["value"]
    for k, v in report.items():
        if k not in ("cmd", "params", "comm", "phases", "est_time", "checks") and not isinstance(v, (dict, list)):
            row[k] = v
    return row


def write_csv(path: str, reports: list):
    rows = [flatten(r) for r in reports]
    fields = []
    for r in rows:
        fields.extend(k for k in r if k not in fields)
    new = not Path(path).exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        if new:
            w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def bench_matmul(m: int, k: int, n: int, bits: int, net: str = "lan", seed: int = 0, casts: bool = False) -> dict:
    """Secure ``X (m x k) @ W (k x n)`` at ``FXP_32^8`` or ``FXP_64^18``.

    With ``casts`` a 32-bit product sits between 64-bit layers: the input is
    downcast from ``FXP_64^18`` and the output upcast back.
    """
    t = {32: LOW, 64: HIGH}[bits]
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (m, k))
    w = rng.normal(0, 1 / np.sqrt(k), (k, n))
    rt = Runtime(seed=seed)
    src = HIGH if casts and t != HIGH else t
    xs, ws = rt.share(encode(x, src), src), rt.share(encode(w, t), t)

    def program(p, xs, ws):
        if xs.ftype != t:
            with p.phase("cast"):
                xs = downcast(xs, t)
        y = matmul_trunc(p, xs, ws)
        if casts and t != HIGH:
            with p.phase("cast"):
                y = upcast(p, y, HIGH)
        return y

    start = time.perf_counter()
    out = rt.run(program, xs, ws)
    elapsed = time.perf_counter() - start
    got = rt.open(out)
    err = float(np.abs(got - x @ w).max())
    stats = rt.stats
    params = {"m": m, "k": k, "n": n, "bits": bits, "net": net, "seed": seed, "casts": casts}
    cfg = {"lan": LAN, "wan": WAN}[net]
    checks = [
        check("matmul_max_abs_vs_float", err <= (k + 4) * t.ulp, err),
        check("dot_product_bytes", stats.phase_total("mul") == 3 * m * n * bits // 8, stats.phase_total("mul")),
    ]
    return make_report("bench-matmul", params, stats, checks, est=estimate_time(stats, cfg), wall_s=elapsed)


def _block_inputs(cfg: BlockConfig, seed: int, weights_path: str | None):
    weights = load_weights(weights_path) if weights_path else random_weights(cfg, seed)
    x = np.random.default_rng(seed + 1).uniform(-2, 2, (cfg.seq_len, cfg.d_model))
    return weights, x


def bench_block(cfg: BlockConfig, modes=("quantized", "uniform64"), seed: int = 0,
                weights_path: str | None = None) -> list:
    """Run the block per precision mode; a final summary report carries the ratio."""
    weights, x = _block_inputs(cfg, seed, weights_path)
    reports, totals = [], {}
    for mode in modes:
        pmap = PrecisionMap() if mode == "quantized" else PrecisionMap.uniform(HIGH)
        g = build_block(cfg, pmap)
        res = execute(g, {"x": x}, backend="secure", params=weights, seed=seed)
        ref = execute(g, {"x": x}, backend="plaintext", params=weights)
        err = oracle.metrics(res.outputs["y"], ref.outputs["y"])["max_abs"]
        totals[mode] = res.stats.total_bytes
        params = {**cfg.to_dict(), "mode": mode, "seed": seed}
        checks = [check("max_abs_vs_oracle<=2^-5", err <= 2 ** -5, err)]
        reports.append(make_report("bench-block", params, res.stats, checks))
    if len(totals) == 2:
        ratio = totals["quantized"] / totals["uniform64"]
        params = {**cfg.to_dict(), "mode": "ratio", "seed": seed}
        checks = [check(f"comm_ratio<={RATIO_TARGET}", ratio <= RATIO_TARGET, ratio)]
        reports.append(make_report("bench-block", params, None, checks, ratio=ratio,
                                   quantized_bytes=totals["quantized"], uniform64_bytes=totals["uniform64"]))
    return reports


RUN_OPS = {
    # op: (input type, secure function)
    "softmax": (LOW, nl.softmax),
    "gelu_quad": (LOW, nl.gelu_quad),
    "gelu_poly": (HIGH, nl.gelu_poly),
    "exp": (HIGH, nl.exp_neg),
    "recip": (HIGH, nl.recip),
    "rsqrt": (HIGH, nl.rsqrt),
    "max": (LOW, nl.max_vec),
}


def load_array(path: str) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        return np.load(p)
    if p.suffix == ".json":
        return np.asarray(json.loads(p.read_text()), dtype=np.float64)
    return np.loadtxt(p, delimiter=",", ndmin=1)


def default_input(op: str, rng) -> np.ndarray:
    if op == "exp":
        return rng.uniform(-14, 0, 64)
    if op in ("recip", "rsqrt"):
        return rng.uniform(0.5, 100, 64)
    if op in ("softmax", "max"):
        return rng.normal(size=(8, 10))
    return rng.uniform(-4, 4, 64)


def run_op(op: str, values: np.ndarray | None = None, seed: int = 0) -> dict:
    if op not in RUN_OPS:
        raise ValueError(f"run-op supports {sorted(RUN_OPS)}")
    t, fn = RUN_OPS[op]
    values = default_input(op, np.random.default_rng(seed)) if values is None else np.asarray(values, float)
    x = encode(values, t)
    rt = Runtime(seed=seed)
    got = rt.reconstruct(rt.run(fn, rt.share(x, t)))
    want = oracle.fxp_oracle(op, [x], t)
    err = oracle.metrics(decode(got, t), decode(want, t))
    ref = oracle.float_ref(op, decode(x, t))
    ferr = oracle.metrics(decode(got, t), ref)
    params = {"op": op, "type": str(t), "shape": list(values.shape), "seed": seed}
    checks = [check("within_oracle_slack", oracle.within_slack(op, got, want), err["max_abs"])]
    return make_report("run-op", params, rt.stats, checks, depth=2, max_abs=err["max_abs"],
                       max_abs_vs_float=ferr["max_abs"])


def load_graph(spec: str) -> Graph:
    if spec == "softmax":
        return softmax_dag()
    return Graph.load(spec)


def dump_graph(spec: str, uniform64: bool = False) -> dict:
    pmap = PrecisionMap.uniform(HIGH) if uniform64 else PrecisionMap()
    g = load_graph(spec)
    typed = compile_graph(g, pmap)
    listing = dump(typed)
    checks = [
        check("validates", True),
        check("idempotent_casts", len(compile_graph(typed, pmap).nodes) == len(typed.nodes)),
    ]
    return make_report("dump-graph", {"graph": spec, "uniform64": uniform64}, None, checks, listing=listing,
                       upcasts=typed.count("upcast"), downcasts=typed.count("downcast"))


def selftest(seed: int = 0) -> dict:
    """Quick invariant sweep over every layer of the stack."""
    rng = np.random.default_rng(seed)
    rt = Runtime(seed=seed)
    checks = []

    # sharing round trip and exact ring arithmetic
    t = LOW
    a, b = rng.uniform(-50, 50, 256), rng.uniform(-50, 50, 256)
    ea, eb = encode(a, t), encode(b, t)
    sa, sb = rt.share(ea, t), rt.share(eb, t)
    checks.append(check("share_reconstruct", rt.reconstruct(sa) == ea))
    checks.append(check("add_exact", rt.reconstruct(rt.run(lambda p, x, y: x + y, sa, sb)) == ea + eb))

    checks.append(check("mul_exact", rt.reconstruct(rt.run(mul, sa, sb)) == ea * eb))
    tr = oracle.ulp_diff(rt.reconstruct(rt.run(lambda p, x: trunc(p, x, 8), rt.share(ea * eb, t))),
                         plain_trunc(ea * eb, 8))
    checks.append(check("trunc_floor_or_next", bool(np.all((tr == 0) | (tr == 1))), int(np.abs(tr).max())))
    bits = rt.reconstruct(rt.run(msb, sa))
    checks.append(check("msb", bool(np.array_equal(bits, (a * 256).round() < 0))))

    # casts
    small = np.arange(-2 ** 10, 2 ** 10, 7) / 256
    up = rt.open(rt.run(lambda p, x: upcast(p, x, HIGH), rt.share(encode(small, LOW), LOW)))
    checks.append(check("upcast_exact", bool(np.array_equal(up, small))))
    hv = encode(rng.uniform(-100, 100, 512), HIGH)
    dn = rt.reconstruct(rt.run(lambda p, x: downcast(x, LOW), rt.share(hv, HIGH)))
    with oracle.rounding("floor"):
        carry = -oracle.ulp_diff(dn, oracle.downcast(hv, HIGH, LOW))
    checks.append(check("downcast_carry_in_0_1_2", bool(np.all((carry >= 0) & (carry <= 2))), int(carry.max())))

    # non-linear functions against the oracle
    for op, vals in [("gelu_quad", rng.uniform(-4, 4, 256)), ("exp", rng.uniform(-15, 0, 256)),
                     ("recip", rng.uniform(0.1, 500, 64)), ("rsqrt", rng.uniform(0.01, 500, 64)),
                     ("softmax", rng.normal(size=(8, 10)))]:
        ti, fn = RUN_OPS[op]
        x = encode(vals, ti)
        got = rt.reconstruct(rt.run(fn, rt.share(x, ti)))
        checks.append(check(f"{op}_vs_oracle", oracle.within_slack(op, got, oracle.fxp_oracle(op, [x], ti))))

    # compiler
    typed = compile_graph(softmax_dag())
    checks.append(check("softmax_dag_one_upcast_one_downcast", typed.count("upcast") == 1 and typed.count("downcast") == 1))
    validate(typed)
    checks.append(check("casts_idempotent", len(compile_graph(typed).nodes) == len(typed.nodes)))
    return make_report("selftest", {"seed": seed}, rt.stats, checks)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qmpc", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0, help=f"randomness seed (env {SEED_ENV} overrides)")
    ap.add_argument("--csv", metavar="PATH", help="also append flattened reports to a CSV file")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("bench-matmul", help="secure matrix product communication at 32 or 64 bits")
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--k", type=int, default=768)
    p.add_argument("--n", type=int, default=3072)
    p.add_argument("--bits", type=int, choices=(32, 64), default=64)
    p.add_argument("--net", choices=("lan", "wan"), default="lan")
    p.add_argument("--casts", action="store_true", help="embed a 32-bit product between 64-bit layers")

    p = sub.add_parser("bench-block", help="toy Transformer block: quantized vs uniform 64-bit")
    p.add_argument("--config", help="JSON file with BlockConfig fields")
    p.add_argument("--weights", help="weight manifest (JSON) written by save_weights")
    p.add_argument("--gelu", choices=("quad", "poly"))
    p.add_argument("--mask", choices=("none", "causal"))
    p.add_argument("--mode", choices=("quantized", "uniform64", "both"), default="both")

    p = sub.add_parser("run-op", help="one secure op compared with the fixed-point oracle")
    p.add_argument("--op", required=True, choices=sorted(RUN_OPS))
    p.add_argument("--input", help=".npy, .json or .csv file with real inputs")

    p = sub.add_parser("dump-graph", help="compile a graph and print its typed listing")
    p.add_argument("--graph", default="softmax", help="graph JSON file, or 'softmax' for the built-in softmax DAG")
    p.add_argument("--uniform64", action="store_true")
    p.add_argument("--text", action="store_true", help="print the listing instead of the JSON report")

    sub.add_parser("selftest", help="fast invariant suite")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    seed = resolve_seed(args.seed)
    if args.cmd == "bench-matmul":
        reports = [bench_matmul(args.m, args.k, args.n, args.bits, args.net, seed, args.casts)]
    elif args.cmd == "bench-block":
        cfg = BlockConfig.load(args.config) if args.config else BlockConfig()
        overrides = {}
        if args.gelu:
            overrides["gelu_mode"] = args.gelu
        if args.mask:
            overrides["mask_mode"] = args.mask
        if overrides:
            cfg = BlockConfig(**{**cfg.to_dict(), **overrides})
        modes = ("quantized", "uniform64") if args.mode == "both" else (args.mode,)
        reports = bench_block(cfg, modes, seed, args.weights)
    elif args.cmd == "run-op":
        reports = [run_op(args.op, load_array(args.input) if args.input else None, seed)]
    elif args.cmd == "dump-graph":
        reports = [dump_graph(args.graph, args.uniform64)]
        if args.text:
            sys.stdout.write(reports[0]["listing"])
    else:
        reports = [selftest(seed)]
    if not (args.cmd == "dump-graph" and args.text):
        for r in reports:
            print(json.dumps(r, sort_keys=False))
    if args.csv:
        write_csv(args.csv, reports)
    failed = [c["name"] for r in reports for c in r["checks"] if not c["pass"]]
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
