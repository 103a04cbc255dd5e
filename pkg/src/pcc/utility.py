"""Utility functions for rate control.

Two families live here:

* the analytic form, evaluated over a vector of sending rates sharing one
  bottleneck of known capacity (used by the equilibrium oracle), and
* the empirical form, evaluated over metrics measured during one monitor
  interval (used by the controller).

All rates and throughputs are in packets per second.  The simple
"throughput minus loss" objective that motivates the safe utility is not
implemented on its own; the safe form below adds a sigmoid cut-off so that
steady-state loss stays near 5%.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

DEFAULT_ALPHA = 100.0
LOSS_CUTOFF = 0.05

# Beyond this exponent e**x overflows a double.
_EXP_LIMIT = 700.0


class UtilityError(ValueError):
    """Raised on invalid utility inputs."""


class UtilityFunctionId(enum.Enum):
    SAFE = "safe"
    LATENCY_SENSITIVE = "latency"
    LOSS_RESILIENT = "loss_resilient"

    @classmethod
    def parse(cls, name: "str | UtilityFunctionId") -> "UtilityFunctionId":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {
            "safe": cls.SAFE,
            "latency": cls.LATENCY_SENSITIVE,
            "latency_sensitive": cls.LATENCY_SENSITIVE,
            "loss_resilient": cls.LOSS_RESILIENT,
            "lossresilient": cls.LOSS_RESILIENT,
        }
        try:
            return aliases[key]
        except KeyError:
            raise UtilityError(f"unknown utility function {name!r}") from None


@dataclass(frozen=True)
class PerformanceMetrics:
    """What one monitor interval measured.

    ``prev_avg_rtt`` is the average RTT of the preceding interval (used only
    by the latency-sensitive utility).  ``packets_sent`` is optional and, when
    given, bounds throughput by one packet of pacing quantization.
    """

    throughput: float
    loss_rate: float
    avg_rtt: float
    prev_avg_rtt: float
    sent_rate: float
    packets_sent: int = 0
    duration: float = 0.0

    def __post_init__(self) -> None:
        for name in ("throughput", "loss_rate", "avg_rtt", "prev_avg_rtt", "sent_rate"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise UtilityError(f"{name} must be finite, got {v!r}")
        if self.throughput < 0 or self.sent_rate < 0:
            raise UtilityError("throughput and sent_rate must be non-negative")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise UtilityError(f"loss_rate {self.loss_rate} outside [0, 1]")
        if self.avg_rtt <= 0 or self.prev_avg_rtt <= 0:
            raise UtilityError("RTTs must be positive")
        if self.duration > 0:
            # acks never outnumber sends; without a send count, allow one packet
            # of slack at each end of the interval around the commanded rate
            if self.packets_sent:
                bound = self.packets_sent / self.duration
            else:
                bound = self.sent_rate + 2.0 / self.duration
            if self.throughput > bound * (1 + 1e-12) + 1e-9:
                raise UtilityError(
                    f"throughput {self.throughput} exceeds what was sent "
                    f"({self.packets_sent} packets at {self.sent_rate})"
                )


@dataclass(frozen=True)
class GameModel:
    capacity: float
    alpha: float = DEFAULT_ALPHA
    n: int = 2

    def __post_init__(self) -> None:
        if not (self.capacity > 0 and math.isfinite(self.capacity)):
            raise UtilityError("capacity must be positive and finite")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise UtilityError("alpha must be positive and finite")
        if self.n < 1:
            raise UtilityError("n must be at least 1")


def sigmoid(y: float, alpha: float = DEFAULT_ALPHA) -> float:
    """Return ``1 / (1 + exp(alpha * y))``, a decreasing cut-off in y."""
    if not (math.isfinite(y) and math.isfinite(alpha)):
        raise UtilityError("sigmoid needs finite arguments")
    if alpha <= 0:
        raise UtilityError("alpha must be positive")
    z = alpha * y
    if z > _EXP_LIMIT:
        return 0.0
    if z < -_EXP_LIMIT:
        return 1.0
    return 1.0 / (1.0 + math.exp(z))


def analytic_loss(rates: Sequence[float], capacity: float) -> float:
    if len(rates) == 0:
        raise UtilityError("empty rate vector")
    if capacity <= 0:
        raise UtilityError("capacity must be positive")
    total = math.fsum(rates)
    if any(r < 0 for r in rates):
        raise UtilityError("rates must be non-negative")
    if total <= capacity:
        return 0.0
    return 1.0 - capacity / total


def analytic_throughput(rate_i: float, loss: float) -> float:
    if not 0.0 <= loss <= 1.0:
        raise UtilityError(f"loss {loss} outside [0, 1]")
    return rate_i * (1.0 - loss)


def analytic_utility(i: int, rates: Sequence[float], model: GameModel) -> float:
    """Safe utility of sender ``i`` when all senders send at ``rates``."""
    if not 0 <= i < len(rates):
        raise UtilityError(f"sender index {i} out of range")
    loss = analytic_loss(rates, model.capacity)
    x_i = rates[i]
    t_i = analytic_throughput(x_i, loss)
    return t_i * sigmoid(loss - LOSS_CUTOFF, model.alpha) - x_i * loss


def empirical_utility(
    uid: "UtilityFunctionId | str",
    m: PerformanceMetrics,
    alpha: float = DEFAULT_ALPHA,
) -> float:
    uid = UtilityFunctionId.parse(uid)
    if not isinstance(m, PerformanceMetrics):
        raise UtilityError("metrics must be a PerformanceMetrics")
    t, loss, x = m.throughput, m.loss_rate, m.sent_rate
    if uid is UtilityFunctionId.SAFE:
        return t * sigmoid(loss - LOSS_CUTOFF, alpha) - x * loss
    if uid is UtilityFunctionId.LATENCY_SENSITIVE:
        ratio = m.prev_avg_rtt / m.avg_rtt
        return (t * sigmoid(loss - LOSS_CUTOFF, alpha) * ratio - x * loss) / m.avg_rtt
    return t * (1.0 - loss)


def min_alpha(n: int) -> float:
    """Smallest sigmoid steepness for which n senders have a unique fair equilibrium."""
    if n < 1:
        raise UtilityError("n must be at least 1")
    return max(2.2 * (n - 1), 100.0)
