"""Numerical checks of the rate game played by senders using the safe utility.

``best_response`` scans a grid over ``[floor, 2C]``, refines twice around the
coarse argmax, then polishes inside one fine step with golden-section search
(the utility is unimodal in a sender's own rate).  ``find_equilibrium`` runs
sequential best responses until no sender wants to move.  ``run_dynamics``
applies the synchronous +/- epsilon comparison rule verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .utility import LOSS_CUTOFF, GameModel, min_alpha

RATE_FLOOR = 1.0
COARSE_POINTS = 2000
REFINE_LEVELS = 2
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class EquilibriumError(RuntimeError):
    """Best-response iteration did not converge; ``rates`` holds the last iterate."""

    def __init__(self, message: str, rates: np.ndarray, residual: float):
        super().__init__(message)
        self.rates = rates
        self.residual = residual


@dataclass(frozen=True)
class EquilibriumSolution:
    rates: np.ndarray
    aggregate: float
    fair: bool
    residual: float
    resolution: float
    iterations: int
    capacity: float

    @property
    def max_pairwise_gap(self) -> float:
        return float(self.rates.max() - self.rates.min())

    @property
    def in_region(self) -> bool:
        """Aggregate strictly inside (C, 20C/19)."""
        c = self.capacity
        return c < self.aggregate < 20.0 * c / 19.0

    @property
    def x_hat(self) -> float:
        return float(self.rates.mean())


@dataclass
class DynamicsTrajectory:
    steps: np.ndarray  # shape (T + 1, n); row t is the rate vector at step t
    epsilon: float
    x_hat: float
    converged_at: int | None = None
    band: tuple[float, float] = field(default=(0.0, 0.0))

    def in_band(self, last: int = 100) -> bool:
        """True when every rate stays strictly inside the band for the last ``last`` steps."""
        lo, hi = self.band
        tail = self.steps[-last:]
        return bool(((tail > lo) & (tail < hi)).all())


def own_utility(x, others_sum: float, model: GameModel):
    """Safe utility of a sender at own rate(s) ``x`` given the others' total.

    Vectorized over ``x``; same formula as ``utility.analytic_utility``.
    """
    x = np.asarray(x, dtype=float)
    total = x + others_sum
    safe_total = np.where(total > 0, total, 1.0)
    loss = np.where(total > model.capacity, 1.0 - model.capacity / safe_total, 0.0)
    z = np.clip(model.alpha * (loss - LOSS_CUTOFF), -700.0, 700.0)
    return x * (1.0 - loss) / (1.0 + np.exp(z)) - x * loss


def default_resolution(model: GameModel) -> float:
    return 2.0 * model.capacity / COARSE_POINTS / 10**REFINE_LEVELS


def _golden_max(f, lo: float, hi: float, iters: int = 60) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def best_response(
    i: int,
    others: Sequence[float],
    model: GameModel,
    resolution: float | None = None,
    polish: bool = True,
) -> float:
    """Best rate for sender ``i`` against ``others``.

    ``others`` is either the full rate vector (entry ``i`` is ignored) or the
    rates of the other senders only.  Ties go to the lower rate.
    """
    others = np.asarray(others, dtype=float)
    if len(others) == model.n:
        s = float(others.sum() - others[i])
    else:
        s = float(others.sum())
    res = default_resolution(model) if resolution is None else float(resolution)
    if res > model.capacity / 1e4:
        raise ValueError("grid resolution must be at most C/10^4")
    lo, hi = RATE_FLOOR, 2.0 * model.capacity
    step = res * 10**REFINE_LEVELS
    grid = np.arange(lo, hi + step / 2, step)
    best = lo
    for level in range(REFINE_LEVELS + 1):
        values = own_utility(grid, s, model)
        best = float(grid[int(np.argmax(values))])
        if level == REFINE_LEVELS:
            break
        a, b = max(lo, best - step), min(hi, best + step)
        step /= 10.0
        grid = np.arange(a, b + step / 2, step)
    if not polish:
        return best
    a, b = max(lo, best - step), min(hi, best + step)
    f = lambda x: float(own_utility(x, s, model))
    x = _golden_max(f, a, b)
    # never return something worse than the grid argmax
    return x if f(x) >= f(best) else best


def residual(rates: np.ndarray, model: GameModel, resolution: float | None = None) -> float:
    return max(
        abs(best_response(i, rates, model, resolution) - rates[i]) for i in range(len(rates))
    )


def find_equilibrium(
    model: GameModel,
    resolution: float | None = None,
    max_iters: int = 5000,
    x0: Sequence[float] | None = None,
    tol: float | None = None,
    check_alpha: bool = True,
) -> EquilibriumSolution:
    if check_alpha and model.alpha < min_alpha(model.n):
        raise ValueError(
            f"alpha={model.alpha} below min_alpha({model.n})={min_alpha(model.n)}"
        )
    res = default_resolution(model) if resolution is None else float(resolution)
    tol = res / 100.0 if tol is None else tol
    if x0 is None:
        x = np.linspace(0.1, 0.9, model.n) * model.capacity
    else:
        x = np.asarray(x0, dtype=float).copy()
        if len(x) != model.n or (x <= 0).any():
            raise ValueError("x0 must hold n positive rates")
    r = math.inf
    for it in range(1, max_iters + 1):
        prev = x.copy()
        for i in range(model.n):
            x[i] = best_response(i, x, model, res)
        # a full sweep moving nobody means each rate is a best response to the rest
        r = float(np.abs(x - prev).max())
        if r < tol:
            r = residual(x, model, res)
            if r < tol:
                break
    else:
        raise EquilibriumError(
            f"no convergence after {max_iters} sweeps (residual {r:.3g})", x, r
        )
    gap = float(x.max() - x.min())
    return EquilibriumSolution(
        rates=x,
        aggregate=float(x.sum()),
        fair=gap < 2.0 * res,
        residual=r,
        resolution=res,
        iterations=it,
        capacity=model.capacity,
    )


def fair_equilibrium_rate(model: GameModel, resolution: float | None = None) -> float:
    """Per-sender rate of the equilibrium reached from an all-equal start."""
    start = np.full(model.n, model.capacity / model.n)
    return find_equilibrium(model, resolution, x0=start, check_alpha=False).x_hat


def run_dynamics(
    model: GameModel,
    x0: Sequence[float],
    epsilon: float,
    steps: int,
    x_hat: float | None = None,
) -> DynamicsTrajectory:
    if not 0.0 < epsilon <= 0.1:
        raise ValueError("epsilon must be in (0, 0.1]")
    x = np.asarray(x0, dtype=float).copy()
    if len(x) != model.n or (x <= 0).any():
        raise ValueError("x0 must hold n positive rates")
    if x_hat is None:
        x_hat = fair_equilibrium_rate(model)
    lo, hi = x_hat * (1 - epsilon) ** 2, x_hat * (1 + epsilon) ** 2
    out = np.empty((steps + 1, model.n))
    out[0] = x
    converged_at = None
    if ((x > lo) & (x < hi)).all():
        converged_at = 0
    up, down = 1.0 + epsilon, 1.0 - epsilon
    for t in range(1, steps + 1):
        others = x.sum() - x
        higher = own_utility(x * up, others, model) > own_utility(x * down, others, model)
        x = np.where(higher, x * up, x * down)
        out[t] = x
        if converged_at is None and ((x > lo) & (x < hi)).all():
            converged_at = t
    return DynamicsTrajectory(
        steps=out, epsilon=epsilon, x_hat=x_hat, converged_at=converged_at, band=(lo, hi)
    )
