"""Running repeated simulations and turning traces into CSV reports."""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ..controller import ControllerConfig
from ..monitor import MiSchedule
from ..sim.engine import run
from ..sim.scenario import Scenario, pps_to_mbps
from ..sim.trace import Trace
from .config import ExperimentConfig
from .metrics import MetricReport, report

WORKERS_ENV = "PCC_WORKERS"

REPORT_COLUMNS = (
    "seed", "flow", "controller", "start_s", "stop_s", "delivered_pkts",
    "throughput_pps", "throughput_mbps", "convergence_s", "rate_stddev_pps",
    "loss_rate", "utilization", "jain_min",
)

SWEEP_COLUMNS = (
    "tm_multiplier", "epsilon_min", "rct_pairs", "runs", "converged_runs",
    "mean_convergence_s", "mean_rate_stddev_pps",
)


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return max(1, os.cpu_count() or 1)


def map_runs(fn: Callable, items: Sequence, workers: int | None = None) -> list:
    """``[fn(x) for x in items]``, spread over worker processes when more than one is allowed."""
    n = min(worker_count(workers), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def seeds_for(config: ExperimentConfig) -> list[int]:
    return [config.scenario.seed + k for k in range(config.repeat)]


def run_seed(scenario: Scenario, seed: int) -> Trace:
    return run(replace(scenario, seed=seed))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: list[MetricReport]
    trace_paths: list[Path]
    report_path: Path | None

    def mean_utilization(self) -> float:
        return float(np.mean([r.utilization for r in self.reports]))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def report_rows(trace: Trace, rep: MetricReport) -> list[list[str]]:
    jain_min = min((j for _, j in rep.jain), default=None)
    ps = int(trace.header.get("packet_size", 1500))
    rows = []
    for f, s in trace.flows.items():
        rows.append([_fmt(v) for v in (
            rep.seed, f, s.controller, float(s.start), float(s.stop), s.delivered,
            rep.throughput[f], pps_to_mbps(rep.throughput[f], ps), rep.convergence[f],
            rep.stddev[f], rep.loss_rate, rep.utilization, jain_min,
        )])
    return rows


def write_report(rows: Iterable[list[str]], path: Path) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    w.writerows(rows)
    path.write_text(buf.getvalue())
    return path


def _run_and_store(job: tuple[Scenario, int, str | None, float]) -> tuple[MetricReport, list, str | None]:
    scenario, seed, trace_path, window = job
    trace = run_seed(scenario, seed)
    rep = report(trace, window)
    if trace_path is not None:
        trace.write(trace_path)
    return rep, report_rows(trace, rep), trace_path


def run_experiment(config: ExperimentConfig, output: str | Path | None = None,
                   workers: int | None = None) -> ExperimentResult:
    """Run every repeat, write one trace per seed and ``report.csv`` when an output dir is set."""
    out = Path(output) if output is not None else config.output_path
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for seed in seeds_for(config):
        path = str(out / f"{config.name}-seed{seed}.ndjson") if out is not None else None
        jobs.append((config.scenario, seed, path, config.metrics_window))
    results = map_runs(_run_and_store, jobs, workers)
    reports = [r for r, _, _ in results]
    report_path = None
    if out is not None:
        rows = [row for _, rs, _ in results for row in rs]
        report_path = write_report(rows, out / "report.csv")
    paths = [Path(p) for _, _, p in results if p is not None]
    return ExperimentResult(config, reports, paths, report_path)


def report_from_traces(paths: Sequence[str | Path], out: str | Path,
                       window: float = 60.0) -> Path:
    """Rebuild ``report.csv`` from stored traces (sorted by seed, then path)."""
    loaded = [(Trace.read(p), str(p)) for p in paths]
    loaded.sort(key=lambda tp: (int(tp[0].header["seed"]), tp[1]))
    rows = []
    for trace, _ in loaded:
        rows.extend(report_rows(trace, report(trace, window)))
    return write_report(rows, Path(out))


def _retune(scenario: Scenario, tm: float, eps: float, pairs: int) -> Scenario:
    flows = []
    for f in scenario.flows:
        c = f.controller
        if isinstance(c, ControllerConfig):
            sched = c.mi_schedule
            c = replace(c, mi_schedule=MiSchedule(sched.rtt_estimate, sched.min_packets, (tm, tm)),
                        epsilon_min=eps, epsilon_max=max(c.epsilon_max, eps), rct_pairs=pairs)
            f = replace(f, controller=c)
        flows.append(f)
    return replace(scenario, flows=tuple(flows))


def _sweep_point(job: tuple[Scenario, int, float]) -> tuple[float | None, float | None]:
    """Convergence time and post-convergence stddev of the last flow to arrive."""
    scenario, seed, window = job
    trace = run_seed(scenario, seed)
    rep = report(trace, stddev_window=window)
    last = max(scenario.flows, key=lambda f: (f.start_time, f.id)).id
    return rep.convergence[last], rep.stddev[last]


def tradeoff_sweep(base: ExperimentConfig, tm_multipliers: Sequence[float],
                   epsilons: Sequence[float], workers: int | None = None,
                   rct_options: Sequence[int] = (2, 1)) -> list[dict]:
    """Mean convergence time and rate stddev for every (T_m, eps_min, RCT) combination.

    T_m is fixed to ``multiplier * RTT`` (no random spread) for the sweep.
    """
    if not tm_multipliers or not epsilons:
        raise ValueError("tm_multipliers and epsilons must be non-empty")
    points = [(tm, eps, pairs) for tm in tm_multipliers for eps in epsilons for pairs in rct_options]
    jobs = []
    for tm, eps, pairs in points:
        sc = _retune(base.scenario, float(tm), float(eps), int(pairs))
        jobs.extend((sc, seed, base.metrics_window) for seed in seeds_for(base))
    results = map_runs(_sweep_point, jobs, workers)
    rows = []
    per = base.repeat
    for k, (tm, eps, pairs) in enumerate(points):
        chunk = results[k * per:(k + 1) * per]
        conv = [c for c, _ in chunk if c is not None]
        sds = [s for _, s in chunk if s is not None]
        rows.append({
            "tm_multiplier": float(tm),
            "epsilon_min": float(eps),
            "rct_pairs": int(pairs),
            "runs": per,
            "converged_runs": len(conv),
            "mean_convergence_s": float(np.mean(conv)) if conv else None,
            "mean_rate_stddev_pps": float(np.mean(sds)) if sds else None,
        })
    return rows


def write_sweep(rows: Sequence[dict], path: str | Path) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path
