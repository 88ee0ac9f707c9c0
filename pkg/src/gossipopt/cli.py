"""Command-line entry point.

Exit codes: 0 on success, 1 on a configuration or input error, 2 when a
solver diverged.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import ExperimentConfig, gen_classification_dataset, gen_regression_dataset, run_experiment
from .errors import ConfigError, GossipOptError
from .lower_bounds import default_hard_instance, lb_curve_centralized, lb_curve_decentralized
from .topology import Graph, build_graph, describe, laplacian

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def _cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.from_json(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    seeds = [args.seed] if args.seed is not None else cfg.seeds
    out_root = Path(args.out_dir or cfg.output)
    diverged = False
    for seed in seeds:
        out = out_root if len(seeds) == 1 else out_root / f"seed_{seed}"
        res = run_experiment(cfg, seed=seed, out_dir=out, target_error=args.target_error)
        statuses = {k: v["status"] for k, v in res.summary["algorithms"].items()}
        diverged |= any(s == "DivergenceError" for s in statuses.values())
        print(f"seed {seed}: ranking {' > '.join(res.summary['ranking'])} -> {out}")
        for name, r in res.summary["algorithms"].items():
            print(f"  {name:15s} {r['status']:16s} time_to_target={r['time_to_target']} final_error={r['final_error']}")
    return EXIT_DIVERGED if diverged else EXIT_OK


def _cmd_gen_data(args) -> int:
    if args.task == "least_squares":
        ds = gen_regression_dataset(args.m, args.d, args.seed)
    else:
        ds = gen_classification_dataset(args.m, args.d, args.seed)
    text = ds.to_csv() if args.format == "csv" else ds.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_graph(args) -> int:
    params = {k: v for k, v in (("n", args.n), ("rows", args.rows), ("cols", args.cols), ("p", args.p)) if v is not None}
    g = build_graph(args.kind, params, seed=args.seed)
    text = g.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def _cmd_spectra(args) -> int:
    try:
        g = Graph.from_json(Path(args.graph).read_text())
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read graph: {exc}") from exc
    info = describe(g)
    if args.full:
        info["spectrum"] = np.linalg.eigvalsh(laplacian(g).entries).tolist()
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_lower_bound(args) -> int:
    t = np.linspace(0.0, args.horizon, args.points)
    if args.kind == "centralized":
        vals = lb_curve_centralized(t, args.kappa, args.delta, args.tau, args.r0, alpha=args.alpha)
    else:
        vals = lb_curve_decentralized(t, args.kappa, args.gamma, args.tau, args.r0, alpha=args.alpha)
    out = {"kind": args.kind, "t": t.tolist(), "bound": np.asarray(vals).tolist()}
    if args.instance:
        inst = default_hard_instance(n=args.n, kappa_l=args.kappa, D=args.D)
        out["instance"] = {**inst.to_dict(), "tail": inst.tail, "kappa_l": inst.kappa_l}
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gossipopt", description="Decentralized optimization benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out-dir")
    r.add_argument("--target-error", type=float)
    r.set_defaults(func=_cmd_run)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("task", choices=("least_squares", "logistic"))
    g.add_argument("--m", type=int, default=10_000)
    g.add_argument("--d", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--format", choices=("json", "csv"), default="json")
    g.add_argument("--out")
    g.set_defaults(func=_cmd_gen_data)

    gr = sub.add_parser("graph", help="write a topology as graph JSON")
    gr.add_argument("kind")
    gr.add_argument("--n", type=int)
    gr.add_argument("--rows", type=int)
    gr.add_argument("--cols", type=int)
    gr.add_argument("--p", type=float)
    gr.add_argument("--seed", type=int, default=0)
    gr.add_argument("--out")
    gr.set_defaults(func=_cmd_graph)

    s = sub.add_parser("spectra", help="spectral summary of a graph JSON file")
    s.add_argument("graph")
    s.add_argument("--full", action="store_true")
    s.set_defaults(func=_cmd_spectra)

    lb = sub.add_parser("lower-bound", help="evaluate a lower-bound curve")
    lb.add_argument("--kind", choices=("centralized", "decentralized"), default="decentralized")
    lb.add_argument("--kappa", type=float, default=1024.0)
    lb.add_argument("--gamma", type=float, default=0.01)
    lb.add_argument("--delta", type=int, default=1)
    lb.add_argument("--tau", type=float, default=1.0)
    lb.add_argument("--r0", type=float, default=1.0)
    lb.add_argument("--alpha", type=float, default=1.0)
    lb.add_argument("--horizon", type=float, default=100.0)
    lb.add_argument("--points", type=int, default=11)
    lb.add_argument("--instance", action="store_true", help="also describe the matching hard instance")
    lb.add_argument("--n", type=int, default=16)
    lb.add_argument("--D", type=int, default=200)
    lb.set_defaults(func=_cmd_lower_bound)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GossipOptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, ValueError) else EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
