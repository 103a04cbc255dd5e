"""Declarative description of a simulated experiment.

Rates are packets per second, times are seconds.  ``packet_size`` only
matters when converting to and from Mbps for reporting.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Union

from ..controller import ControllerConfig
from ..monitor import MiSchedule
from ..utility import UtilityFunctionId
from .rng import substream

DEFAULT_PACKET_SIZE = 1500


class ScenarioError(ValueError):
    pass


class QueueDiscipline(enum.Enum):
    DROP_TAIL_FIFO = "fifo"
    PER_FLOW_FQ = "fq"

    @classmethod
    def parse(cls, value: "str | QueueDiscipline") -> "QueueDiscipline":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        if key in ("fifo", "droptail", "drop_tail", "drop_tail_fifo", "droptailfifo"):
            return cls.DROP_TAIL_FIFO
        if key in ("fq", "per_flow_fq", "perflowfq", "fair"):
            return cls.PER_FLOW_FQ
        raise ScenarioError(f"unknown queue discipline {value!r}")


def mbps_to_pps(mbps: float, packet_size: int = DEFAULT_PACKET_SIZE) -> float:
    return mbps * 1e6 / (8.0 * packet_size)


def pps_to_mbps(pps: float, packet_size: int = DEFAULT_PACKET_SIZE) -> float:
    return pps * 8.0 * packet_size / 1e6


@dataclass(frozen=True)
class LinkSpec:
    capacity: float
    prop_delay: float
    buffer_packets: int
    random_loss: float = 0.0
    queue_discipline: QueueDiscipline = QueueDiscipline.DROP_TAIL_FIFO
    # loss applied to acks on the way back
    ack_loss: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "queue_discipline", QueueDiscipline.parse(self.queue_discipline))
        if not (self.capacity > 0 and math.isfinite(self.capacity)):
            raise ScenarioError("link capacity must be positive")
        if not self.prop_delay >= 0:
            raise ScenarioError("prop_delay must be non-negative")
        if int(self.buffer_packets) != self.buffer_packets or self.buffer_packets < 1:
            raise ScenarioError("buffer_packets must be an integer >= 1")
        if not 0.0 <= self.random_loss < 1.0:
            raise ScenarioError("random_loss must be in [0, 1)")
        if not 0.0 <= self.ack_loss < 1.0:
            raise ScenarioError("ack_loss must be in [0, 1)")

    @property
    def base_rtt(self) -> float:
        return 2.0 * self.prop_delay + 1.0 / self.capacity

    @property
    def bdp_packets(self) -> float:
        return self.capacity * 2.0 * self.prop_delay


@dataclass(frozen=True)
class DynamicSchedule:
    """Link parameters that change at given instants; the first point is at t=0."""

    points: tuple[tuple[float, LinkSpec], ...]

    def __post_init__(self) -> None:
        pts = tuple((float(t), spec) for t, spec in self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise ScenarioError("empty dynamic schedule")
        if pts[0][0] != 0.0:
            raise ScenarioError("dynamic schedule must start at t=0")
        for (t0, _), (t1, _) in zip(pts, pts[1:]):
            if not t1 > t0:
                raise ScenarioError("schedule times must be strictly increasing")
        disciplines = {spec.queue_discipline for _, spec in pts}
        if len(disciplines) != 1:
            raise ScenarioError("queue discipline cannot change over time")

    def spec_at(self, t: float) -> LinkSpec:
        spec = self.points[0][1]
        for at, s in self.points:
            if at <= t:
                spec = s
            else:
                break
        return spec


@dataclass(frozen=True)
class AimdParams:
    """Textbook AIMD baseline: +1 packet per RTT, halve on loss at most once per RTT."""

    initial_cwnd: float = 2.0
    decrease_factor: float = 0.5
    min_cwnd: float = 1.0
    slow_start: bool = True


@dataclass(frozen=True)
class FlowSpec:
    id: int
    controller: Union[ControllerConfig, AimdParams]
    start_time: float = 0.0
    stop_time: float | None = None
    path_rtt_extra: float = 0.0
    # sender's RTT guess before any feedback (handshake); defaults to the base path RTT
    initial_rtt: float | None = None
    # finite transfer: stop once this many packets have been delivered
    size_packets: int | None = None

    def __post_init__(self) -> None:
        if self.stop_time is not None and not self.start_time < self.stop_time:
            raise ScenarioError(f"flow {self.id}: start_time must precede stop_time")
        if self.start_time < 0:
            raise ScenarioError(f"flow {self.id}: negative start_time")
        if self.path_rtt_extra < 0:
            raise ScenarioError(f"flow {self.id}: negative path_rtt_extra")
        if self.size_packets is not None and self.size_packets < 1:
            raise ScenarioError(f"flow {self.id}: size_packets must be >= 1")

    @property
    def is_pcc(self) -> bool:
        return isinstance(self.controller, ControllerConfig)


LinkLike = Union[LinkSpec, DynamicSchedule]


@dataclass(frozen=True)
class Scenario:
    link: LinkLike
    flows: tuple[FlowSpec, ...]
    duration: float
    seed: int = 0
    packet_size: int = DEFAULT_PACKET_SIZE
    record_packets: bool = False
    # random release delay added to each paced send, uniform in [0, send_jitter)
    # bottleneck service times; breaks drop-tail phase lock between strictly
    # periodic senders (0 = exact gaps)
    send_jitter: float = 5.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "flows", tuple(self.flows))

    def validate(self) -> None:
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ScenarioError("duration must be positive")
        if not self.flows:
            raise ScenarioError("scenario has no flows")
        ids = [f.id for f in self.flows]
        if len(set(ids)) != len(ids):
            raise ScenarioError("flow ids must be unique")
        for f in self.flows:
            if f.start_time >= self.duration:
                raise ScenarioError(f"flow {f.id} starts after the scenario ends")
            if f.stop_time is not None and f.stop_time > self.duration:
                raise ScenarioError(f"flow {f.id} stops after the scenario ends")
            if not isinstance(f.controller, (ControllerConfig, AimdParams)):
                raise ScenarioError(f"flow {f.id}: unknown controller {f.controller!r}")
        if not 0 <= self.seed < 2**64:
            raise ScenarioError("seed must fit in 64 bits")
        if self.packet_size <= 0:
            raise ScenarioError("packet_size must be positive")
        if not 0.0 <= self.send_jitter <= 10.0:
            raise ScenarioError("send_jitter must be in [0, 10] service times")

    @property
    def timeline(self) -> tuple[tuple[float, LinkSpec], ...]:
        if isinstance(self.link, DynamicSchedule):
            return self.link.points
        return ((0.0, self.link),)

    def initial_link(self) -> LinkSpec:
        return self.timeline[0][1]


def pcc_config(
    rtt: float,
    utility: "UtilityFunctionId | str" = UtilityFunctionId.SAFE,
    epsilon_min: float = 0.01,
    epsilon_max: float = 0.05,
    rct_pairs: int = 2,
    tm_range: tuple[float, float] = (1.7, 2.2),
    min_packets: int = 10,
) -> ControllerConfig:
    return ControllerConfig(
        mi_schedule=MiSchedule(rtt, min_packets, tm_range),
        epsilon_min=epsilon_min,
        epsilon_max=max(epsilon_max, epsilon_min),
        utility=UtilityFunctionId.parse(utility),
        rct_pairs=rct_pairs,
    )


def pcc_flow(flow_id: int, link: LinkSpec, start: float = 0.0, stop: float | None = None,
             extra: float = 0.0, **config_kw) -> FlowSpec:
    """A PCC flow whose initial RTT guess is the path's base RTT."""
    rtt = link.base_rtt + extra
    return FlowSpec(flow_id, pcc_config(rtt, **config_kw), start, stop, extra, rtt)


def aimd_flow(flow_id: int, link: LinkSpec, start: float = 0.0, stop: float | None = None,
              extra: float = 0.0, params: AimdParams | None = None) -> FlowSpec:
    rtt = link.base_rtt + extra
    return FlowSpec(flow_id, params or AimdParams(), start, stop, extra, rtt)


def with_seed(scenario: Scenario, seed: int) -> Scenario:
    return replace(scenario, seed=seed)


def incast_scenario(n_senders: int, flow_size: int, link: LinkSpec,
                    controller: str = "pcc", seed: int = 0,
                    duration: float | None = None) -> Scenario:
    """``n_senders`` synchronized transfers of ``flow_size`` packets into one bottleneck.

    The default horizon is ten times the ideal completion time of the whole block.
    """
    if n_senders < 2:
        raise ScenarioError("incast needs at least two senders")
    if flow_size < 1:
        raise ScenarioError("flow_size must be at least one packet")
    ideal = n_senders * flow_size / link.capacity + link.base_rtt
    horizon = duration if duration is not None else max(1.0, 10.0 * ideal)
    flows = []
    for k in range(n_senders):
        if controller == "pcc":
            f = pcc_flow(k, link)
        elif controller == "aimd":
            f = aimd_flow(k, link)
        else:
            raise ScenarioError(f"unknown controller {controller!r}")
        flows.append(replace(f, size_packets=int(flow_size)))
    return Scenario(link, tuple(flows), horizon, seed)


def random_dynamic_schedule(
    duration: float,
    period: float,
    seed: int,
    bandwidth_mbps: tuple[float, float] = (10.0, 100.0),
    rtt: tuple[float, float] = (0.010, 0.100),
    loss: tuple[float, float] = (0.0, 0.01),
    packet_size: int = DEFAULT_PACKET_SIZE,
    buffer_bdp: float = 1.0,
    min_buffer: int = 10,
) -> DynamicSchedule:
    """Bandwidth, RTT and loss redrawn independently and uniformly every ``period``.

    The buffer follows the current BDP (times ``buffer_bdp``).
    """
    rng = substream(seed, "link", "dynamics")
    points = []
    t = 0.0
    while t < duration:
        cap = mbps_to_pps(rng.uniform(*bandwidth_mbps), packet_size)
        r = rng.uniform(*rtt)
        p = rng.uniform(*loss)
        buf = max(min_buffer, int(round(buffer_bdp * cap * r)))
        points.append((t, LinkSpec(cap, r / 2.0, buf, p)))
        t += period
    return DynamicSchedule(tuple(points))


def fair_share_at(scenario: Scenario, t: float) -> float:
    """Capacity divided by the flows active at ``t`` (0 when none are)."""
    active = sum(
        1 for f in scenario.flows
        if f.start_time <= t < (f.stop_time if f.stop_time is not None else scenario.duration)
    )
    if not active:
        return 0.0
    spec = scenario.link.spec_at(t) if isinstance(scenario.link, DynamicSchedule) else scenario.link
    return spec.capacity / active


def flow_seeds(seed: int, count: int) -> list[int]:
    """Seeds for ``count`` repeats derived from ``seed`` with stride 1."""
    return [seed + k for k in range(count)]
