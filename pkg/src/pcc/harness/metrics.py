"""Evaluation metrics computed from a finished trace.

Throughput is always taken from 1-second bins of delivered packets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from ..sim.trace import Trace


class MetricError(ValueError):
    pass


def jain_index(throughputs: Sequence[float]) -> float:
    t = np.asarray(throughputs, dtype=float)
    if t.size == 0:
        raise MetricError("jain_index of an empty vector")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise MetricError("throughputs must be finite and non-negative")
    s2 = float(np.sum(t * t))
    if s2 == 0.0:
        raise MetricError("jain_index of an all-zero vector")
    return float(np.sum(t)) ** 2 / (t.size * s2)


def ideal_share_series(trace: Trace) -> np.ndarray:
    """Per-second equal share: capacity over flows active during that second.

    A flow counts as active in second k if it is running at the start of it.
    """
    cap = trace.capacity_series()
    n = np.zeros(cap.size)
    for s in trace.flows.values():
        end = s.stop if s.completion_time is None else min(s.stop, s.completion_time)
        for k in range(cap.size):
            if s.start <= k < end:
                n[k] += 1
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(n > 0, cap / np.maximum(n, 1), 0.0)


IdealRate = Union[float, Sequence[float], np.ndarray]


def convergence_time(trace: Trace, flow: int, ideal_rate: IdealRate | None = None,
                     tolerance: float = 0.25, hold: int = 5) -> float | None:
    """Seconds after the flow's start until every 1-s throughput sample from
    ``t`` to ``t + hold`` lies within ``tolerance`` of the ideal rate.

    ``ideal_rate`` may be a constant or a per-second series; by default it is
    the capacity split over the flows active in each second.  Returns ``None``
    when no such ``t`` exists inside the trace.
    """
    series = trace.throughput_series(flow)
    if ideal_rate is None:
        ideal = ideal_share_series(trace)
    elif np.ndim(ideal_rate) == 0:
        ideal = np.full(series.size, float(ideal_rate))
    else:
        ideal = np.asarray(ideal_rate, dtype=float)
        if ideal.size < series.size:
            raise MetricError("ideal_rate series shorter than the trace")
    stats = trace.flows[flow]
    first = int(math.ceil(stats.start))
    ok = np.abs(series - ideal[:series.size]) <= tolerance * ideal[:series.size]
    ok &= ideal[:series.size] > 0
    # samples t .. t+hold inclusive
    span = hold + 1
    run = 0
    for k in range(first, series.size):
        run = run + 1 if ok[k] else 0
        if run >= span:
            return float(k - span + 1 - first) + (first - stats.start)
    return None


def rate_stddev(trace: Trace, flow: int, start: float, window: float = 60.0) -> float:
    """Standard deviation of the flow's 1-s throughput samples in [start, start + window)."""
    series = trace.throughput_series(flow)
    lo = int(math.floor(start))
    hi = lo + int(round(window))
    if window <= 1 or lo < 0 or hi > series.size:
        raise MetricError(f"window [{lo}, {hi}) does not fit a trace of {series.size} s")
    return float(np.std(series[lo:hi]))


def utilization(trace: Trace, t0: float = 0.0, t1: float | None = None) -> float:
    """Delivered packets over what the link could carry in whole seconds [t0, t1)."""
    t1 = trace.duration if t1 is None else t1
    lo, hi = int(t0), int(math.ceil(t1))
    delivered = sum(sum(s.delivered_bins[lo:hi]) for s in trace.flows.values())
    possible = trace.capacity_integral(float(lo), float(min(hi, trace.duration)))
    return delivered / possible if possible > 0 else 0.0


def loss_rate(trace: Trace, t0: float = 0.0, t1: float | None = None) -> float:
    """Aggregate loss over finalized monitor intervals that start in [t0, t1)."""
    t1 = trace.duration if t1 is None else t1
    sent = lost = 0
    for r in trace.mi_records():
        if t0 <= r.start < t1:
            sent += r.sent
            lost += r.lost
    if sent == 0:
        stats = trace.flows.values()
        sent = sum(s.sent for s in stats)
        lost = sum(s.drop_buffer + s.drop_random for s in stats)
    return lost / sent if sent else 0.0


def window_means(trace: Trace, flow: int, window: float) -> np.ndarray:
    series = trace.throughput_series(flow)
    w = max(1, int(round(window)))
    n = series.size // w
    return series[:n * w].reshape(n, w).mean(axis=1) if n else np.zeros(0)


def jain_series(trace: Trace, window: float, flows: Sequence[int] | None = None) -> list[tuple[float, float]]:
    """Jain's index per window over windows where every listed flow is active throughout."""
    ids = list(flows) if flows is not None else trace.flow_ids
    w = max(1, int(round(window)))
    out = []
    means = {f: window_means(trace, f, w) for f in ids}
    n = min(m.size for m in means.values()) if means else 0
    for k in range(n):
        t0, t1 = k * w, (k + 1) * w
        if all(trace.flows[f].start <= t0 and t1 <= trace.flows[f].stop for f in ids):
            vals = [means[f][k] for f in ids]
            if sum(vals) > 0:
                out.append((float(t0), jain_index(vals)))
    return out


@dataclass
class MetricReport:
    seed: int
    duration: float
    throughput: dict[int, float]
    window_throughput: dict[int, list[float]]
    jain: list[tuple[float, float]]
    convergence: dict[int, float | None]
    stddev: dict[int, float | None]
    loss_rate: float
    utilization: float
    extra: dict = field(default_factory=dict)


def report(trace: Trace, window: float = 60.0, stddev_window: float = 60.0) -> MetricReport:
    ideal = ideal_share_series(trace)
    conv, sd, thr, win = {}, {}, {}, {}
    for f, s in trace.flows.items():
        active = max(1e-9, min(s.stop, trace.duration) - s.start)
        thr[f] = s.delivered / active
        win[f] = [float(v) for v in window_means(trace, f, window)]
        c = convergence_time(trace, f, ideal)
        conv[f] = c
        sd[f] = None
        if c is not None:
            try:
                sd[f] = rate_stddev(trace, f, s.start + c, stddev_window)
            except MetricError:
                pass
    return MetricReport(
        seed=int(trace.header["seed"]),
        duration=trace.duration,
        throughput=thr,
        window_throughput=win,
        jain=jain_series(trace, window),
        convergence=conv,
        stddev=sd,
        loss_rate=loss_rate(trace),
        utilization=utilization(trace),
    )
