"""Per-flow learning rate controller.

The controller moves through three phases:

Starting
    double the rate after every interval whose utility beat the previous one;
    on the first drop go back to the previous rate and start deciding.
Decision
    run ``rct_pairs`` pairs of trials at ``r(1+eps)`` and ``r(1-eps)`` in random
    order.  A direction wins only if it wins every pair; otherwise hold the
    rate and widen eps by ``epsilon_min`` (up to ``epsilon_max``).
Adjusting
    keep moving in the winning direction with growing steps
    ``r_n = r_{n-1} * (1 + n * epsilon_min * dir)`` while utility does not fall;
    when it falls, revert to ``r_{n-1}`` and decide again.

The transition functions are pure: they take a frozen ``ControllerState`` and
return ``(new_state, commanded_rate)``.  ``PccController`` wraps them with the
bookkeeping needed to run inside the simulator (which interval measures what).
"""

from __future__ import annotations

import enum
import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

from .monitor import MiSchedule
from .utility import DEFAULT_ALPHA, PerformanceMetrics, UtilityFunctionId, empirical_utility


class ControllerError(RuntimeError):
    pass


class Phase(enum.Enum):
    STARTING = "starting"
    DECISION = "decision"
    ADJUSTING = "adjusting"


@dataclass(frozen=True)
class ControllerConfig:
    mi_schedule: MiSchedule
    epsilon_min: float = 0.01
    epsilon_max: float = 0.05
    utility: UtilityFunctionId = UtilityFunctionId.SAFE
    initial_rate: float | None = None
    rct_pairs: int = 2
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self) -> None:
        if not 0 < self.epsilon_min <= self.epsilon_max < 1:
            raise ControllerError("need 0 < epsilon_min <= epsilon_max < 1")
        if self.rct_pairs < 1:
            raise ControllerError("rct_pairs must be >= 1")
        if self.initial_rate is not None and not self.initial_rate > 0:
            raise ControllerError("initial_rate must be positive")
        object.__setattr__(self, "utility", UtilityFunctionId.parse(self.utility))

    @property
    def start_rate(self) -> float:
        if self.initial_rate is not None:
            return self.initial_rate
        return 2.0 / self.mi_schedule.rtt_estimate

    @property
    def min_rate(self) -> float:
        """One packet per RTT."""
        return 1.0 / self.mi_schedule.rtt_estimate


@dataclass(frozen=True)
class ControllerState:
    phase: Phase
    current_rate: float
    last_utility: float | None = None
    epsilon: float = 0.0
    trial_plan: tuple[float, ...] = ()
    direction: int = 0
    step_n: int = 0
    prev_rate: float | None = None

    def __post_init__(self) -> None:
        if not self.current_rate > 0:
            raise ControllerError(f"rate must stay positive, got {self.current_rate}")


def initial_state(config: ControllerConfig) -> ControllerState:
    return ControllerState(Phase.STARTING, config.start_rate)


def _enter_decision(rate: float, config: ControllerConfig,
                    epsilon: float | None = None) -> ControllerState:
    return ControllerState(
        Phase.DECISION,
        rate,
        epsilon=config.epsilon_min if epsilon is None else epsilon,
    )


def on_starting_utility(state: ControllerState, u_new: float,
                        config: ControllerConfig) -> tuple[ControllerState, float]:
    if state.phase is not Phase.STARTING:
        raise ControllerError(f"not starting (phase {state.phase.value})")
    if state.last_utility is None or u_new > state.last_utility:
        doubled = 2.0 * state.current_rate
        return replace(state, current_rate=doubled, prev_rate=state.current_rate,
                       last_utility=u_new), doubled
    back = state.prev_rate if state.prev_rate is not None else state.current_rate
    back = max(back, config.min_rate)
    return _enter_decision(back, config), back


def plan_rct(rate: float, epsilon: float, rng: random.Random,
             pairs: int = 2) -> tuple[float, ...]:
    """Trial rates for one decision round, each pair shuffled independently."""
    hi, lo = rate * (1.0 + epsilon), rate * (1.0 - epsilon)
    plan: list[float] = []
    for _ in range(pairs):
        plan.extend((hi, lo) if rng.random() < 0.5 else (lo, hi))
    return tuple(plan)


def decide(results: Sequence[tuple[float, float]], base_rate: float) -> int:
    """+1 if the higher rate won every pair, -1 if the lower did, else 0.

    ``results`` holds ``(rate, utility)`` in plan order; consecutive entries form
    a pair.  Equal utilities count as no win.
    """
    if len(results) % 2:
        raise ControllerError("trial results must come in pairs")
    votes = set()
    for k in range(0, len(results), 2):
        (r1, u1), (r2, u2) = results[k], results[k + 1]
        if r1 > r2:
            u_hi, u_lo = u1, u2
        elif r2 > r1:
            u_hi, u_lo = u2, u1
        else:
            raise ControllerError("a trial pair must hold two different rates")
        votes.add(1 if u_hi > u_lo else -1 if u_lo > u_hi else 0)
    return votes.pop() if len(votes) == 1 else 0


def on_decision_utilities(state: ControllerState, results: Sequence[tuple[float, float]],
                          config: ControllerConfig) -> tuple[ControllerState, float]:
    if state.phase is not Phase.DECISION:
        raise ControllerError(f"not deciding (phase {state.phase.value})")
    if not state.trial_plan or len(results) != len(state.trial_plan):
        raise ControllerError(
            f"expected {len(state.trial_plan)} trial results, got {len(results)}"
        )
    r, eps = state.current_rate, state.epsilon
    direction = decide(results, r)
    if direction == 0:
        widened = min(eps + config.epsilon_min, config.epsilon_max)
        return _enter_decision(r, config, widened), r
    new_rate = r * (1.0 + direction * eps)
    if new_rate < config.min_rate:
        return _enter_decision(config.min_rate, config), config.min_rate
    # the decided move itself is step 1 of the adjusting sequence
    return ControllerState(Phase.ADJUSTING, new_rate, direction=direction,
                           step_n=1, prev_rate=r), new_rate


def on_adjusting_utility(state: ControllerState, u_n: float,
                         config: ControllerConfig) -> tuple[ControllerState, float]:
    if state.phase is not Phase.ADJUSTING:
        raise ControllerError(f"not adjusting (phase {state.phase.value})")
    if state.last_utility is not None and u_n < state.last_utility:
        back = state.prev_rate if state.prev_rate is not None else state.current_rate
        back = max(back, config.min_rate)
        return _enter_decision(back, config), back
    step = state.step_n + 1
    new_rate = state.current_rate * (1.0 + step * config.epsilon_min * state.direction)
    if new_rate < config.min_rate:
        return _enter_decision(config.min_rate, config), config.min_rate
    return replace(state, current_rate=new_rate, prev_rate=state.current_rate,
                   step_n=step, last_utility=u_n), new_rate


@dataclass
class PccController:
    """Drives the pure transitions from monitor-interval events.

    The simulator calls ``rate_for_new_interval`` whenever it opens an interval
    and ``on_mi_finalized`` when an interval's metrics are ready.  Intervals are
    tagged: ``("probe", k)`` measures one step of Starting or Adjusting,
    ``("trial", round, i)`` is trial ``i`` of a decision round, and ``None``
    marks filler intervals sent at the base rate while trial feedback is
    pending.  Filler metrics never drive a decision.

    Starting and Adjusting move on every interval without waiting for feedback:
    each new probe runs at the rate the pure transition would command if every
    pending probe turns out well.  Results are applied in probe order; the first
    one that ends the phase discards the rest of the speculation and sets
    ``realign`` so the caller cuts the current interval short.
    """

    config: ControllerConfig
    rng: random.Random = field(default_factory=lambda: random.Random(0))
    state: ControllerState = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.state is None:
            self.state = initial_state(self.config)
        # set when the caller should abandon the open interval and start a new one
        self.realign = False
        self._probe_seq = 0
        self._reset_speculation()
        self._round = 0
        self._next_trial = 0
        self._retry: list[int] = []
        self._results: dict[int, tuple[float, float]] = {}

    @property
    def rate(self) -> float:
        return self.state.current_rate

    @property
    def phase(self) -> Phase:
        return self.state.phase

    def _advance(self, st: ControllerState, u: float) -> tuple[ControllerState, float]:
        if st.phase is Phase.STARTING:
            return on_starting_utility(st, u, self.config)
        return on_adjusting_utility(st, u, self.config)

    def _reset_speculation(self) -> None:
        self._pending: deque[tuple[Any, float]] = deque()
        self._early: dict[Any, PerformanceMetrics] = {}
        self._spec = self.state
        self._spec_open = self.state.phase is not Phase.DECISION

    def _start_round(self) -> None:
        plan = plan_rct(self.state.current_rate, self.state.epsilon, self.rng,
                        self.config.rct_pairs)
        self.state = replace(self.state, trial_plan=plan)
        self._round += 1
        self._next_trial = 0
        self._retry = []
        self._results = {}

    def rate_for_new_interval(self) -> tuple[float, Any]:
        st = self.state
        if st.phase is Phase.DECISION:
            if not st.trial_plan:
                self._start_round()
                st = self.state
            if self._retry:
                i = self._retry.pop(0)
            elif self._next_trial < len(st.trial_plan):
                i = self._next_trial
                self._next_trial += 1
            else:
                return st.current_rate, None
            return st.trial_plan[i], ("trial", self._round, i)
        if not self._spec_open:
            return self._spec.current_rate, None
        rate = self._spec.current_rate
        self._probe_seq += 1
        tag = ("probe", self._probe_seq)
        self._pending.append((tag, rate))
        # with no previous utility the comparison is vacuous: the success branch
        nxt, _ = self._advance(replace(self._spec, last_utility=None), 0.0)
        if nxt.phase is self._spec.phase:
            self._spec = nxt
        else:
            # even full success would leave the phase (rate floor); stop speculating
            self._spec_open = False
        return rate, tag

    def on_interval_discarded(self, tag: Any) -> None:
        """An interval carrying ``tag`` was cut short; measure that step again."""
        if tag is None:
            return
        if tag[0] == "probe":
            tags = [t for t, _ in self._pending]
            if tag in tags:
                self._reset_speculation()
        elif tag[0] == "trial" and tag[1] == self._round:
            self._retry.append(tag[2])

    def utility(self, metrics: PerformanceMetrics) -> float:
        return empirical_utility(self.config.utility, metrics, self.config.alpha)

    def on_mi_finalized(self, tag: Any, metrics: PerformanceMetrics) -> float:
        """Consume one interval's metrics; return the rate for the next interval."""
        if tag is None:
            return self._next_rate()
        kind = tag[0]
        if kind == "probe":
            if tag[1] > self._probe_seq:
                raise ControllerError(f"unknown interval tag {tag}")
            if all(t != tag for t, _ in self._pending):
                return self._next_rate()  # stale: speculation was discarded
            self._early[tag] = metrics
            while self._pending and self._pending[0][0] in self._early:
                head, _ = self._pending.popleft()
                u = self.utility(self._early.pop(head))
                new, rate = self._advance(self.state, u)
                moved_on = new.phase is not self.state.phase
                self.state = new
                if moved_on:
                    self._reset_speculation()
                    self.realign = True
                    return rate
            return self._next_rate()
        if kind == "trial":
            if tag[1] > self._round:
                raise ControllerError(f"unknown interval tag {tag}")
            if tag[1] != self._round or self.state.phase is not Phase.DECISION:
                return self._next_rate()
            i = tag[2]
            self._results[i] = (self.state.trial_plan[i], self.utility(metrics))
            if len(self._results) < len(self.state.trial_plan):
                return self._next_rate()
            ordered = [self._results[k] for k in range(len(self.state.trial_plan))]
            self.state, rate = on_decision_utilities(self.state, ordered, self.config)
            self._reset_speculation()
            self.realign = True
            return rate
        raise ControllerError(f"unknown interval tag {tag}")

    def _next_rate(self) -> float:
        if self.state.phase is Phase.DECISION:
            return self.state.current_rate
        return self._spec.current_rate
