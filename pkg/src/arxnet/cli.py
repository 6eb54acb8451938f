"""Command-line harness: simulate networks, identify from data, run benchmarks.

Subcommands
-----------
simulate   draw a random stable network and write a data CSV plus truth JSON
identify   fit every node of a data CSV and write a result JSON (and DOT graph)
benchmark  paired-trial comparison of the three prior modes, with report files

Exit codes: 0 success, 2 usage, 3 data error, 4 solver failure, 5 partial
(some nodes or trials failed but output was written).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import metrics
from .admm import AdmmDivergence
from .cccp import SolveConfig, SolverFailure, solve_cccp
from .em import solve_em
from .model import (
    GenerationError,
    InstabilityError,
    boolean_topology,
    load_timeseries,
    random_network,
    save_network,
    save_timeseries,
    simulate,
)
from .regression import assemble_network, build_problem

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER, EXIT_PARTIAL = 0, 2, 3, 4, 5
JOBS_ENV = "ARXNET_JOBS"

MODE_ALIASES = {
    "combined": "combined",
    "element": "element_only",
    "element_only": "element_only",
    "group": "group_only",
    "group_only": "group_only",
}
BENCH_MODES = ("combined", "element_only", "group_only")
MODE_LABELS = {
    "combined": "combined",
    "element_only": "element (SBL)",
    "group_only": "group (GSBL)",
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _default_jobs() -> int:
    env = os.environ.get(JOBS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"{JOBS_ENV} must be an integer, got {env!r}", EXIT_USAGE) from None
    return os.cpu_count() or 1


def _parse_lambda(text: str):
    if text == "estimate":
        return "estimate", None, None
    if text == "grid":
        return "grid", None, None
    if text.startswith("grid:"):
        vals = tuple(float(v) for v in text[5:].split(","))
        return "grid", None, vals
    if text.startswith("fixed:"):
        return "fixed", float(text[6:]), None
    raise CliError(f"--lambda must be estimate, fixed:<v>, grid, or grid:<v1,v2,..>, got {text!r}", EXIT_USAGE)


def _apply_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser):
    """key=value file whose entries override command-line flags."""
    if not getattr(args, "config", None):
        return
    path = args.config
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}", EXIT_DATA) from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value", EXIT_USAGE)
        key, value = (part.strip() for part in line.split("=", 1))
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise CliError(f"{path}:{lineno}: unknown option {key!r}", EXIT_USAGE)
        current = getattr(args, dest)
        if isinstance(current, bool):
            setattr(args, dest, value.lower() in ("1", "true", "yes", "on"))
        elif isinstance(current, int):
            setattr(args, dest, int(value))
        elif isinstance(current, float):
            setattr(args, dest, float(value))
        else:
            setattr(args, dest, value)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arxnet",
        description="Sparse ARX network identification from time-series data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a random network and simulate data")
    sim.add_argument("--nodes", type=int, default=10)
    sim.add_argument("--inputs", type=int, default=1)
    sim.add_argument("--order", type=int, default=3, help="max true polynomial order")
    sim.add_argument("--density", type=float, default=0.2)
    sim.add_argument("--samples", type=int, default=20)
    sim.add_argument("--noise-var", type=float, default=0.01)
    sim.add_argument("--input-var", type=float, default=1.0)
    sim.add_argument("--coeff-scale", type=float, default=0.5)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", default="data.csv", help="data CSV path")
    sim.add_argument("--truth", default="truth.json", help="truth JSON path")
    sim.add_argument("--config", help="key=value file overriding flags")

    ident = sub.add_parser("identify", help="identify a network from a data CSV")
    ident.add_argument("--data", required=True)
    ident.add_argument("--k", type=int, required=True, help="lag upper bound")
    ident.add_argument("--solver", choices=("cccp", "em", "admm"), default="cccp")
    ident.add_argument("--mode", choices=tuple(MODE_ALIASES), default="combined")
    ident.add_argument("--lambda", dest="lambda_spec", default="estimate",
                       help="estimate | fixed:<v> | grid | grid:<v1,v2,..>")
    ident.add_argument("--penalize-self-group", action="store_true")
    ident.add_argument("--restarts", type=int, default=1)
    ident.add_argument("--seed", type=int, default=0)
    ident.add_argument("--jobs", type=int, default=None)
    ident.add_argument("--out", default="result.json")
    ident.add_argument("--dot", help="optional DOT graph path")
    ident.add_argument("--config", help="key=value file overriding flags")

    bench = sub.add_parser("benchmark", help="paired-trial comparison of prior modes")
    bench.add_argument("--trials", type=int, default=100)
    bench.add_argument("--nodes", type=int, default=10)
    bench.add_argument("--inputs", type=int, default=1)
    bench.add_argument("--order", type=int, default=3)
    bench.add_argument("--k", type=int, default=6)
    bench.add_argument("--samples", type=int, default=20)
    bench.add_argument("--density", type=float, default=0.2)
    bench.add_argument("--noise-var", type=float, default=0.01)
    bench.add_argument("--input-var", type=float, default=1.0)
    bench.add_argument("--coeff-scale", type=float, default=0.5)
    bench.add_argument("--solver", choices=("cccp", "em", "admm"), default="cccp")
    bench.add_argument("--lambda", dest="lambda_spec", default="estimate")
    bench.add_argument("--redraw-topology", action="store_true",
                       help="draw a fresh topology per trial instead of sharing one")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--jobs", type=int, default=None)
    bench.add_argument("--out", default="benchmark.json")
    bench.add_argument("--table", default="benchmark.md")
    bench.add_argument("--config", help="key=value file overriding flags")
    return parser


def _make_config(args, mode: str) -> SolveConfig:
    lambda_mode, lambda_value, lambda_grid = _parse_lambda(args.lambda_spec)
    solver = args.solver
    if solver == "admm" and lambda_mode != "estimate":
        raise CliError("--solver admm requires --lambda estimate", EXIT_USAGE)
    return SolveConfig(
        mode=mode,
        penalize_self_group=getattr(args, "penalize_self_group", False),
        lambda_mode=lambda_mode,
        lambda_value=lambda_value,
        lambda_grid=lambda_grid,
        inner_solver="admm" if solver == "admm" else "apg",
    )


def _solver_fn(name: str):
    return solve_em if name == "em" else solve_cccp


def _solve_one_node(payload):
    """Worker: solve one node, optionally with jittered restarts."""
    Y, U, node, k, cfg, solver, restarts, seed = payload
    from .model import TimeSeries

    data = TimeSeries(Y=Y, U=U)
    prob = build_problem(data, node, k)
    fn = _solver_fn(solver)
    best = None
    errors = []
    for r in range(max(1, restarts)):
        jitter = (seed * 1000003 + node * 1009 + r) % (2**32)
        run_cfg = cfg if r == 0 else replace(cfg, init_jitter_seed=jitter)
        try:
            result = fn(prob, run_cfg)
        except (SolverFailure, AdmmDivergence, np.linalg.LinAlgError, FloatingPointError) as exc:
            errors.append(str(exc))
            continue
        score = result.diagnostics.objective_trace[-1] if result.diagnostics.objective_trace else np.inf
        if best is None or score < best[0]:
            best = (score, result)
    if best is None:
        return node, None, "; ".join(errors) or "solver failed"
    return node, best[1], None


def _run_nodes(data, k, cfg, solver, restarts, seed, jobs):
    payloads = [
        (data.Y, data.U, node, k, cfg, solver, restarts, seed) for node in range(data.p)
    ]
    if jobs > 1 and data.p > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_solve_one_node, payloads))
    else:
        results = [_solve_one_node(p) for p in payloads]
    return sorted(results, key=lambda triple: triple[0])


def _write_dot(path, topology):
    lines = ["digraph network {", "  rankdir=LR;"]
    for i in range(topology.p):
        lines.append(f"  y{i + 1};")
    for j in range(topology.m):
        lines.append(f"  u{j + 1} [shape=box];")
    for i in range(topology.p):
        for j in range(topology.p):
            if topology.node_edges[i, j]:
                lines.append(f"  y{j + 1} -> y{i + 1};")
        for j in range(topology.m):
            if topology.input_edges[i, j]:
                lines.append(f"  u{j + 1} -> y{i + 1};")
    lines.append("}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _json_dump(payload, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def cmd_simulate(args) -> int:
    try:
        net = random_network(
            p=args.nodes,
            m=args.inputs,
            max_order=args.order,
            density=args.density,
            coeff_scale=args.coeff_scale,
            seed=args.seed,
            noise_var=args.noise_var,
        )
        data = simulate(net, T=args.samples, input_var=args.input_var, seed=args.seed + 1)
    except (GenerationError, InstabilityError, ValueError) as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    try:
        save_timeseries(data, args.out)
        save_network(net, args.truth)
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_DATA) from None
    print(f"wrote {args.out} ({data.p} nodes, {data.m} inputs, T={data.T}) and {args.truth}")
    return EXIT_OK


def cmd_identify(args) -> int:
    start = time.perf_counter()
    jobs = args.jobs if args.jobs else _default_jobs()
    if args.k < 1:
        raise CliError("--k must be at least 1", EXIT_USAGE)
    mode = MODE_ALIASES[args.mode]
    cfg = _make_config(args, mode)
    try:
        data = load_timeseries(args.data)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load data: {exc}", EXIT_DATA) from None
    if args.k >= data.T:
        raise CliError(f"--k {args.k} needs more than {data.T} samples", EXIT_DATA)

    results = _run_nodes(data, args.k, cfg, args.solver, args.restarts, args.seed, jobs)
    solved = {node: res for node, res, err in results if res is not None}
    failures = {node: err for node, res, err in results if res is None}
    if not solved:
        raise CliError(
            "all nodes failed: " + "; ".join(f"y{n + 1}: {e}" for n, e in sorted(failures.items())),
            EXIT_SOLVER,
        )

    weights = [solved[n].weights if n in solved else None for n in range(data.p)]
    filled = [
        w if w is not None else _zero_weights(data, args.k, node)
        for node, w in enumerate(weights)
    ]
    topology = metrics.detect_topology(filled)
    est_net = assemble_network(filled, noise_vars=[
        solved[n].hyper.lam if n in solved else 0.0 for n in range(data.p)
    ])

    node_payload = []
    for node in range(data.p):
        if node in solved:
            res = solved[node]
            lay = res.weights.layout
            node_payload.append({
                "node": f"y{node + 1}",
                "weights": [float(v) for v in res.weights.w],
                "groups": [
                    {
                        "source": _source_label(src),
                        "norm": float(np.linalg.norm(res.weights.group(g))),
                    }
                    for g, src in enumerate(lay.sources)
                ],
                "beta": [float(v) for v in res.hyper.beta],
                "gamma": [float(v) for v in res.hyper.gamma],
                "lambda": float(res.hyper.lam),
                "diagnostics": res.diagnostics.to_dict(),
            })
        else:
            node_payload.append({"node": f"y{node + 1}", "error": failures[node]})

    payload = {
        "schema": SCHEMA_VERSION,
        "kind": "identification",
        "solver": args.solver,
        "config": {
            "data": args.data,
            "k": args.k,
            "solver": args.solver,
            "mode": mode,
            "lambda": args.lambda_spec,
            "penalize_self_group": bool(args.penalize_self_group),
            "restarts": args.restarts,
            "seed": args.seed,
        },
        "nodes": node_payload,
        "topology": {
            "node_edges": topology.node_edges.astype(int).tolist(),
            "input_edges": topology.input_edges.astype(int).tolist(),
        },
        "network": {
            "A": [[list(e) for e in row] for row in est_net.A.coeffs],
            "B": [[list(e) for e in row] for row in est_net.B.coeffs],
            "noise_var": list(est_net.noise_var),
        },
        "timestamp": {
            "created": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
            "wall_time_s": time.perf_counter() - start,
        },
    }
    try:
        _json_dump(payload, args.out)
        if args.dot:
            _write_dot(args.dot, topology)
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_DATA) from None
    if failures:
        for node, err in sorted(failures.items()):
            print(f"warning: node y{node + 1} failed: {err}", file=sys.stderr)
        print(f"wrote {args.out} ({len(solved)}/{data.p} nodes)")
        return EXIT_PARTIAL
    print(f"wrote {args.out} ({data.p} nodes)")
    return EXIT_OK


def _zero_weights(data, k, node):
    from .regression import Weights, linear_layout

    lay = linear_layout(data.p, data.m, node, k)
    return Weights(w=np.zeros(lay.n_columns), layout=lay)


def _source_label(src) -> str:
    kind, j = src
    if kind == "node":
        return f"y{j + 1}"
    if kind == "input":
        return f"u{j + 1}"
    if kind == "self":
        return f"y{j + 1} (self)"
    return f"dict{j}"


def _run_benchmark_trial(payload):
    """Worker: one paired trial across all prior modes."""
    (trial, entropy, structure, args_dict) = payload
    a = argparse.Namespace(**args_dict)
    seq = np.random.SeedSequence(entropy)
    net_seed, data_seed = seq.spawn(2)
    try:
        net = random_network(
            p=a.nodes, m=a.inputs, max_order=a.order, density=a.density,
            coeff_scale=a.coeff_scale, seed=net_seed, noise_var=a.noise_var,
            structure=structure,
        )
        data = simulate(net, T=a.samples, input_var=a.input_var, seed=data_seed)
    except (GenerationError, InstabilityError) as exc:
        return trial, None, str(exc)
    truth_topo = boolean_topology(net)
    out = {}
    for mode in BENCH_MODES:
        cfg = _make_config(a, mode)
        per_node = []
        lams = []
        try:
            for node in range(a.nodes):
                prob = build_problem(data, node, a.k)
                res = _solver_fn(a.solver)(prob, cfg)
                per_node.append(res.weights)
                lams.append(res.hyper.lam)
        except (SolverFailure, AdmmDivergence, np.linalg.LinAlgError, FloatingPointError) as exc:
            out[mode] = {"error": str(exc)}
            continue
        est_topo = metrics.detect_topology(per_node)
        score = metrics.score_topology(est_topo, truth_topo)
        err = metrics.coeff_inf_error(assemble_network(per_node, noise_vars=lams), net)
        out[mode] = {
            "tp_rate": score.tp_rate,
            "fp_rate": score.fp_rate,
            "exact": score.exact,
            "inf_error": err.inf_norm,
        }
    return trial, out, None


def _aggregate(trials_payload):
    agg = {}
    for mode in BENCH_MODES:
        rows = []
        for t in trials_payload:
            m = t.get("methods", {}).get(mode)
            if m and "error" not in m:
                rows.append(m)
        if not rows:
            agg[mode] = {"trials": 0}
            continue
        agg[mode] = {
            "trials": len(rows),
            "tp_min": min(r["tp_rate"] for r in rows),
            "tp_mean": float(np.mean([r["tp_rate"] for r in rows])),
            "fp_max": max(r["fp_rate"] for r in rows),
            "fp_mean": float(np.mean([r["fp_rate"] for r in rows])),
            "exact_rate": float(np.mean([1.0 if r["exact"] else 0.0 for r in rows])),
            "err_mean": float(np.mean([r["inf_error"] for r in rows])),
            "err_min": min(r["inf_error"] for r in rows),
            "err_max": max(r["inf_error"] for r in rows),
        }
    return agg


def _render_table(agg) -> str:
    pct = lambda v: f"{100.0 * v:.0f}%"
    lines = [
        "### Topology inference",
        "",
        "| Method | TP (min) | FP (max) | Correct |",
        "|---|---|---|---|",
    ]
    for mode in BENCH_MODES:
        a = agg[mode]
        if a.get("trials"):
            lines.append(
                f"| {MODE_LABELS[mode]} | {pct(a['tp_min'])} | {pct(a['fp_max'])} | {pct(a['exact_rate'])} |"
            )
        else:
            lines.append(f"| {MODE_LABELS[mode]} | - | - | - |")
    lines += [
        "",
        "### Coefficient error (max abs deviation)",
        "",
        "| Method | Mean | Min | Max |",
        "|---|---|---|---|",
    ]
    for mode in BENCH_MODES:
        a = agg[mode]
        if a.get("trials"):
            lines.append(
                f"| {MODE_LABELS[mode]} | {a['err_mean']:.3g} | {a['err_min']:.3g} | {a['err_max']:.3g} |"
            )
        else:
            lines.append(f"| {MODE_LABELS[mode]} | - | - | - |")
    return "\n".join(lines) + "\n"


def cmd_benchmark(args) -> int:
    start = time.perf_counter()
    if args.trials < 1:
        raise CliError("--trials must be at least 1", EXIT_USAGE)
    jobs = args.jobs if args.jobs else _default_jobs()
    _parse_lambda(args.lambda_spec)  # validate early
    master = np.random.SeedSequence(args.seed)
    topo_seq, trial_root = master.spawn(2)
    structure = None
    if not args.redraw_topology:
        rng = np.random.default_rng(topo_seq)
        node_mask = rng.random((args.nodes, args.nodes)) < args.density
        np.fill_diagonal(node_mask, True)
        input_mask = rng.random((args.nodes, args.inputs)) < args.density
        structure = (node_mask, input_mask)

    args_dict = {
        k: getattr(args, k)
        for k in (
            "nodes", "inputs", "order", "k", "samples", "density", "noise_var",
            "input_var", "coeff_scale", "solver", "lambda_spec",
        )
    }
    args_dict["penalize_self_group"] = False
    entropies = [int(e) for e in trial_root.generate_state(args.trials, dtype=np.uint64)]
    payloads = [(t, entropies[t], structure, args_dict) for t in range(args.trials)]
    if jobs > 1 and args.trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(_run_benchmark_trial, payloads))
    else:
        raw = [_run_benchmark_trial(p) for p in payloads]
    raw.sort(key=lambda triple: triple[0])

    trials_payload = []
    failed = 0
    for trial, methods, err in raw:
        if methods is None:
            failed += 1
            trials_payload.append({"trial": trial, "error": err, "methods": {}})
        else:
            bad = sum(1 for m in methods.values() if "error" in m)
            failed += 1 if bad == len(methods) else 0
            trials_payload.append({"trial": trial, "methods": methods})
    agg = _aggregate(trials_payload)
    payload = {
        "schema": SCHEMA_VERSION,
        "kind": "benchmark",
        "protocol": dict(args_dict, trials=args.trials, seed=args.seed,
                         shared_topology=not args.redraw_topology),
        "trials": trials_payload,
        "aggregate": agg,
        "timestamp": {
            "created": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
            "wall_time_s": time.perf_counter() - start,
        },
    }
    table = _render_table(agg)
    try:
        _json_dump(payload, args.out)
        with open(args.table, "w", encoding="utf-8") as fh:
            fh.write(table)
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_DATA) from None
    print(table, end="")
    print(f"wrote {args.out} and {args.table}")
    if failed == args.trials:
        raise CliError("every trial failed", EXIT_SOLVER)
    return EXIT_PARTIAL if failed else EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, parser)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "identify":
            return cmd_identify(args)
        return cmd_benchmark(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
