"""Command line entry point: ``pcc-harness run|sweep|equilibrium|report``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..equilibrium import EquilibriumError, find_equilibrium, run_dynamics
from ..sim.scenario import ScenarioError
from ..sim.trace import TraceError
from ..utility import GameModel, min_alpha
from .config import ConfigError, read_config
from .experiment import (
    report_from_traces,
    run_experiment,
    tradeoff_sweep,
    write_sweep,
)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _load(args):
    cfg = read_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_scenario(replace(cfg.scenario, seed=args.seed))
    if args.repeat is not None:
        cfg = replace(cfg, repeat=args.repeat)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out) if args.out else cfg.output_path or Path("out") / cfg.name
    res = run_experiment(cfg, out, args.workers)
    for rep in res.reports:
        conv = ", ".join(f"{f}:{'-' if c is None else f'{c:g}s'}" for f, c in rep.convergence.items())
        print(f"seed {rep.seed}: utilization {rep.utilization:.3f}  loss {rep.loss_rate:.4f}  "
              f"convergence {conv}")
    print(f"wrote {len(res.trace_paths)} traces and {res.report_path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    rows = tradeoff_sweep(cfg, args.tm, args.eps, args.workers)
    out = Path(args.out) if args.out else Path("out") / f"{cfg.name}-sweep.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sweep(rows, out)
    for r in rows:
        conv, sd = r["mean_convergence_s"], r["mean_rate_stddev_pps"]
        print(f"Tm={r['tm_multiplier']:g}xRTT eps={r['epsilon_min']:g} rct={r['rct_pairs']}: "
              f"convergence {'-' if conv is None else f'{conv:.1f}s'}  "
              f"stddev {'-' if sd is None else f'{sd:.1f}pps'}  ({r['converged_runs']}/{r['runs']})")
    print(f"wrote {out}")
    return 0


def cmd_equilibrium(args) -> int:
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for n in args.n:
            for cap in args.capacity:
                alpha = args.alpha if args.alpha is not None else min_alpha(n)
                model = GameModel(cap, alpha, n)
                sol = find_equilibrium(model, check_alpha=not args.force)
                rec = {"kind": "Equilibrium", "n": n, "capacity": cap, "alpha": alpha,
                       "rates": [float(x) for x in sol.rates], "aggregate": sol.aggregate,
                       "fair": sol.fair, "in_region": sol.in_region,
                       "residual": sol.residual, "resolution": sol.resolution}
                print(json.dumps(rec), file=out)
                if args.steps:
                    rng = np.random.default_rng(args.seed)
                    x0 = rng.uniform(0.01, 1.0, n) * cap
                    traj = run_dynamics(model, x0, args.epsilon, args.steps, sol.x_hat)
                    rec = {"kind": "Dynamics", "n": n, "capacity": cap, "epsilon": args.epsilon,
                           "x0": [float(x) for x in x0], "band": list(traj.band),
                           "converged_at": traj.converged_at, "in_band_final": traj.in_band()}
                    if args.trajectory:
                        rec["steps"] = traj.steps.tolist()
                    print(json.dumps(rec), file=out)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_report(args) -> int:
    paths = []
    for p in args.traces:
        p = Path(p)
        paths.extend(sorted(p.glob("*.ndjson")) if p.is_dir() else [p])
    if not paths:
        raise ConfigError("traces", "no trace files found")
    out = report_from_traces(paths, args.out, args.window)
    print(f"wrote {out} from {len(paths)} traces")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcc-harness", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="experiment YAML file")
        sp.add_argument("--seed", type=int, help="override the base seed")
        sp.add_argument("--repeat", type=int, help="override the repeat count (seed stride 1)")
        sp.add_argument("--out", help="output directory (run) or CSV path (sweep)")
        sp.add_argument("--workers", type=int,
                        help="worker processes (default: $PCC_WORKERS or CPU count)")

    sp = sub.add_parser("run", help="run an experiment and write traces plus report.csv")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="stability/convergence trade-off over T_m and eps_min")
    common(sp)
    sp.add_argument("--tm", type=_floats, default=[4.8, 3.0, 2.0, 1.0],
                    help="T_m as RTT multiples, comma separated")
    sp.add_argument("--eps", type=_floats, default=[0.01, 0.02, 0.05],
                    help="eps_min values, comma separated")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("equilibrium", help="equilibrium and dynamics of the rate game (NDJSON)")
    sp.add_argument("--n", type=lambda s: [int(x) for x in s.split(",")], default=[2, 3, 4])
    sp.add_argument("--capacity", type=_floats, default=[100.0, 1000.0])
    sp.add_argument("--alpha", type=float, help="default: smallest alpha allowed for n")
    sp.add_argument("--force", action="store_true", help="allow alpha below the bound")
    sp.add_argument("--epsilon", type=float, default=0.01)
    sp.add_argument("--steps", type=int, default=0, help="also run this many dynamics steps")
    sp.add_argument("--trajectory", action="store_true", help="include every step")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="write records here instead of stdout")
    sp.set_defaults(func=cmd_equilibrium)

    sp = sub.add_parser("report", help="rebuild report.csv from stored traces")
    sp.add_argument("traces", nargs="+", help="trace files or directories of *.ndjson")
    sp.add_argument("--out", default="report.csv")
    sp.add_argument("--window", type=float, default=60.0, help="Jain window in seconds")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError, TraceError, EquilibriumError, ValueError, OSError) as exc:
        print(f"pcc-harness: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
