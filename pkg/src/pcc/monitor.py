"""Monitor intervals: slicing a flow's timeline and aggregating per-packet feedback.

A packet belongs to the interval during which it was sent, whatever interval
is open when its ack or loss notification arrives.  An interval is finalized
once it has closed and every packet it sent has resolved (acked or lost), or
when its feedback deadline passes; packets still unresolved then count as lost.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any

from .utility import PerformanceMetrics


class MonitorError(RuntimeError):
    pass


class MiState(enum.Enum):
    OPEN = "open"
    AWAITING_FEEDBACK = "awaiting"
    FINALIZED = "finalized"
    ABANDONED = "abandoned"


@dataclass(frozen=True)
class MiSchedule:
    rtt_estimate: float
    min_packets: int = 10
    rtt_multiplier_range: tuple[float, float] = (1.7, 2.2)

    def __post_init__(self) -> None:
        low, high = self.rtt_multiplier_range
        # low == high is allowed so that sweeps can pin the interval length
        if not 0 < low <= high:
            raise MonitorError(f"bad rtt multiplier range {self.rtt_multiplier_range}")
        if self.min_packets < 1:
            raise MonitorError("min_packets must be >= 1")
        if not self.rtt_estimate > 0:
            raise MonitorError("rtt_estimate must be positive")

    def with_rtt(self, rtt: float) -> "MiSchedule":
        return MiSchedule(rtt, self.min_packets, self.rtt_multiplier_range)


def interval_duration(sched: MiSchedule, rate: float, random_draw: float) -> float:
    """Max of the time to send ``min_packets`` and a random multiple of the RTT."""
    if not rate > 0:
        raise MonitorError("interval_duration needs a positive rate")
    low, high = sched.rtt_multiplier_range
    return max(sched.min_packets / rate, (low + random_draw * (high - low)) * sched.rtt_estimate)


class MonitorInterval:
    """Accounting record tying one commanded rate to its eventual outcome."""

    __slots__ = (
        "id", "commanded_rate", "start_time", "end_time", "tag", "state",
        "packets_sent", "packets_acked", "packets_lost", "rtt_sum",
        "outstanding", "silent", "resolved_by", "rtt_estimate",
    )

    def __init__(self, mi_id: int, rate: float, start: float, end: float,
                 tag: Any = None, rtt_estimate: float = 0.0):
        if not end > start:
            raise MonitorError(f"interval end {end} must follow start {start}")
        self.id = mi_id
        self.commanded_rate = rate
        self.start_time = start
        self.end_time = end
        self.tag = tag
        self.state = MiState.OPEN
        self.packets_sent = 0
        self.packets_acked = 0
        self.packets_lost = 0
        self.rtt_sum = 0.0
        self.outstanding: set[int] = set()
        # packets whose feedback will never arrive (lost acks); resolved at the deadline
        self.silent = 0
        self.resolved_by = start
        self.rtt_estimate = rtt_estimate

    def __repr__(self) -> str:
        return (f"MonitorInterval(id={self.id}, rate={self.commanded_rate:.3f}, "
                f"[{self.start_time:.4f}, {self.end_time:.4f}), {self.state.value}, "
                f"sent={self.packets_sent} acked={self.packets_acked} lost={self.packets_lost})")

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time

    @property
    def deadline(self) -> float:
        return self.end_time + 2.0 * self.duration + 4.0 * self.rtt_estimate

    @property
    def complete(self) -> bool:
        """Closed, and nothing left to hear about except silent packets."""
        return self.state is MiState.AWAITING_FEEDBACK and len(self.outstanding) == self.silent

    def _check_open_for_feedback(self) -> None:
        if self.state is MiState.FINALIZED:
            raise MonitorError(f"MI {self.id} already finalized")

    def record_send(self, packet_id: int, time: float) -> None:
        if self.state is not MiState.OPEN:
            raise MonitorError(f"MI {self.id} is not open")
        if packet_id in self.outstanding:
            raise MonitorError(f"packet {packet_id} sent twice")
        self.outstanding.add(packet_id)
        self.packets_sent += 1

    def _resolve(self, packet_id: int) -> None:
        self._check_open_for_feedback()
        try:
            self.outstanding.remove(packet_id)
        except KeyError:
            raise MonitorError(
                f"packet {packet_id} unknown to MI {self.id} or already resolved"
            ) from None

    def record_ack(self, packet_id: int, rtt_sample: float, at: float | None = None) -> None:
        self._resolve(packet_id)
        self.packets_acked += 1
        self.rtt_sum += rtt_sample
        if at is not None and at > self.resolved_by:
            self.resolved_by = at

    def record_loss(self, packet_id: int, at: float | None = None) -> None:
        self._resolve(packet_id)
        self.packets_lost += 1
        if at is not None and at > self.resolved_by:
            self.resolved_by = at

    def record_silent(self, packet_id: int) -> None:
        """The packet's feedback is lost; it stays outstanding until the deadline."""
        self._check_open_for_feedback()
        if packet_id not in self.outstanding:
            raise MonitorError(f"packet {packet_id} unknown to MI {self.id}")
        self.silent += 1

    def close(self) -> None:
        if self.state is MiState.OPEN:
            self.state = MiState.AWAITING_FEEDBACK

    def finalize_time(self) -> float:
        """When the sender has heard everything it is going to hear about this interval."""
        t = self.resolved_by
        if self.silent:
            t = max(t, self.deadline)
        return max(t, self.end_time)


def open_interval(now: float, rate: float, sched: MiSchedule, draw: float,
                  mi_id: int = 0, current: MonitorInterval | None = None,
                  tag: Any = None) -> MonitorInterval:
    if current is not None and current.state is MiState.OPEN:
        raise MonitorError(f"MI {current.id} is still open")
    duration = interval_duration(sched, rate, draw)
    return MonitorInterval(mi_id, rate, now, now + duration, tag, sched.rtt_estimate)


def finalize(mi: MonitorInterval, clock_now: float,
             prev_avg_rtt: float | None = None) -> PerformanceMetrics:
    """Turn a closed interval into metrics.

    Before ``mi.deadline`` every packet must have resolved; at or after it,
    stragglers count as lost.  With no acks at all the average RTT falls back to
    ``prev_avg_rtt`` (or the interval's RTT estimate).
    """
    if mi.state is MiState.OPEN:
        mi.close()
    if mi.state is not MiState.AWAITING_FEEDBACK:
        raise MonitorError(f"MI {mi.id} cannot be finalized from state {mi.state.value}")
    if mi.packets_sent == 0:
        raise MonitorError(f"MI {mi.id} sent no packets")
    if mi.outstanding:
        if clock_now < mi.deadline:
            raise MonitorError(
                f"MI {mi.id} has {len(mi.outstanding)} unresolved packets before its deadline"
            )
        mi.packets_lost += len(mi.outstanding)
        mi.outstanding.clear()
        mi.silent = 0
    assert mi.packets_acked + mi.packets_lost == mi.packets_sent
    mi.state = MiState.FINALIZED
    if mi.packets_acked:
        avg_rtt = mi.rtt_sum / mi.packets_acked
    else:
        avg_rtt = prev_avg_rtt if prev_avg_rtt else mi.rtt_estimate
    prev = prev_avg_rtt if prev_avg_rtt else avg_rtt
    return PerformanceMetrics(
        throughput=mi.packets_acked / mi.duration,
        loss_rate=mi.packets_lost / mi.packets_sent,
        avg_rtt=avg_rtt,
        prev_avg_rtt=prev,
        sent_rate=mi.commanded_rate,
        packets_sent=mi.packets_sent,
        duration=mi.duration,
    )


def realign(mi: MonitorInterval, now: float, new_rate: float, sched: MiSchedule,
            draw: float, mi_id: int | None = None, tag: Any = None) -> MonitorInterval:
    """Abandon ``mi`` and open a fresh interval at ``now``.

    The abandoned interval never produces metrics.  Re-aligning to the rate
    already in force is a no-op and returns ``mi`` unchanged.
    """
    if mi.state is not MiState.OPEN:
        raise MonitorError(f"MI {mi.id} is not open")
    if math.isclose(new_rate, mi.commanded_rate, rel_tol=1e-12):
        return mi
    mi.state = MiState.ABANDONED
    return open_interval(now, new_rate, sched, draw,
                         mi.id + 1 if mi_id is None else mi_id, tag=tag)


@dataclass(frozen=True)
class MiRecord:
    """One finalized interval as written to the trace."""

    flow: int
    mi: int
    start: float
    end: float
    rate: float
    sent: int
    acked: int
    lost: int
    throughput: float
    loss_rate: float
    avg_rtt: float
    utility: float
