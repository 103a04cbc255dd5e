"""Bottleneck link models.

``FifoLink`` is a drop-tail FIFO solved analytically.  The link serves one
packet per unit of "work"; ``W(t)`` is the work the link could have done by
time ``t`` under its (piecewise constant) capacity schedule.  A packet accepted
at ``t`` starts service at work ``max(W(t), finish)`` where ``finish`` is the
completion work of the previous packet, and departs when ``W`` reaches that
plus one.  Packets queued across a capacity change therefore drain at the new
capacity, and the fate of every packet is known the moment it arrives.

``FqLink`` is per-flow fair queueing (deficit round robin with a one-packet
quantum, which for equal-size packets is plain round robin), simulated with
explicit departure events.
"""

from __future__ import annotations

import bisect
import enum
import math
from collections import deque
from typing import Any, Sequence

from .scenario import LinkSpec

# tolerance when turning a fractional backlog into a packet count
_WORK_EPS = 1e-9


class EnqueueOutcome(enum.Enum):
    QUEUED = "queued"
    DROPPED_BUFFER = "drop_buffer"
    DROPPED_RANDOM = "drop_random"


QUEUED = EnqueueOutcome.QUEUED
DROPPED_BUFFER = EnqueueOutcome.DROPPED_BUFFER
DROPPED_RANDOM = EnqueueOutcome.DROPPED_RANDOM


class _Timeline:
    """Piecewise constant link parameters with a cumulative work function."""

    def __init__(self, points: Sequence[tuple[float, LinkSpec]]):
        self.times = [float(t) for t, _ in points]
        self.specs = [s for _, s in points]
        self.caps = [s.capacity for s in self.specs]
        self.works = [0.0]
        for k in range(1, len(points)):
            span = self.times[k] - self.times[k - 1]
            self.works.append(self.works[-1] + span * self.caps[k - 1])
        self.k = 0

    def seg(self, t: float) -> int:
        """Index of the segment containing ``t``; time only moves forward."""
        k = self.k
        times = self.times
        n = len(times)
        while k + 1 < n and times[k + 1] <= t:
            k += 1
        self.k = k
        return k

    def spec_at(self, t: float) -> LinkSpec:
        return self.specs[self.seg(t)]

    def work_at(self, t: float) -> float:
        k = self.seg(t)
        return self.works[k] + self.caps[k] * (t - self.times[k])

    def time_at_work(self, w: float) -> float:
        works = self.works
        k = self.k
        if k + 1 < len(works) and works[k + 1] <= w:
            k = bisect.bisect_right(works, w, lo=k) - 1
        return self.times[k] + (w - works[k]) / self.caps[k]


class FifoLink:
    """Drop-tail FIFO; ``buffer_packets`` counts packets waiting behind the one in service."""

    def __init__(self, points: Sequence[tuple[float, LinkSpec]]):
        self.timeline = _Timeline(points)
        self.finish_work = 0.0
        self.max_waiting = 0

    def spec_at(self, t: float) -> LinkSpec:
        return self.timeline.spec_at(t)

    def waiting_at(self, now: float) -> int:
        backlog = self.finish_work - self.timeline.work_at(now)
        if backlog <= _WORK_EPS:
            return 0
        return max(0, math.ceil(backlog - _WORK_EPS) - 1)

    def enqueue(self, now: float, random_draw: float) -> tuple[EnqueueOutcome, float]:
        """Offer one packet at ``now``.

        Returns the outcome and the time the packet leaves (or, for a drop,
        would have left) the link.  ``random_draw`` is uniform in [0, 1) and
        decides random loss, which hits before the queue.
        """
        tl = self.timeline
        k = tl.seg(now)
        spec = tl.specs[k]
        w_now = tl.works[k] + tl.caps[k] * (now - tl.times[k])
        finish = self.finish_work
        start = finish if finish > w_now else w_now
        if random_draw < spec.random_loss:
            return DROPPED_RANDOM, tl.time_at_work(start + 1.0)
        backlog = finish - w_now
        if backlog > _WORK_EPS:
            waiting = math.ceil(backlog - _WORK_EPS) - 1
            if waiting >= spec.buffer_packets:
                return DROPPED_BUFFER, tl.time_at_work(start + 1.0)
            if waiting + 1 > self.max_waiting:
                self.max_waiting = waiting + 1
        self.finish_work = start + 1.0
        return QUEUED, tl.time_at_work(start + 1.0)


class FqLink:
    """Per-flow fair queueing with a shared buffer split evenly among backlogged flows."""

    def __init__(self, points: Sequence[tuple[float, LinkSpec]]):
        self.timeline = _Timeline(points)
        self.queues: dict[Any, deque] = {}
        self.rr: deque = deque()
        self.in_service: Any = None
        self.service_flow: Any = None
        self.max_share_used = 0

    def spec_at(self, t: float) -> LinkSpec:
        return self.timeline.spec_at(t)

    @property
    def busy(self) -> bool:
        return self.in_service is not None

    def backlog(self, flow: Any) -> int:
        q = self.queues.get(flow)
        return len(q) if q else 0

    def enqueue(self, now: float, flow: Any, packet: Any,
                random_draw: float) -> tuple[EnqueueOutcome, float | None]:
        """Offer ``packet`` of ``flow``.

        Returns the outcome and, when the link was idle and starts serving this
        packet, its departure time (the caller schedules a departure event).
        """
        spec = self.timeline.spec_at(now)
        if random_draw < spec.random_loss:
            return DROPPED_RANDOM, None
        q = self.queues.get(flow)
        if q is None:
            q = self.queues[flow] = deque()
        if self.in_service is None:
            self.in_service = packet
            self.service_flow = flow
            return QUEUED, now + 1.0 / spec.capacity
        active = len(self.rr) + (0 if q else 1)
        share = max(1, spec.buffer_packets // active)
        if len(q) >= share:
            return DROPPED_BUFFER, None
        if not q:
            self.rr.append(flow)
        q.append(packet)
        if len(q) > self.max_share_used:
            self.max_share_used = len(q)
        return QUEUED, None

    def drop_delay(self, now: float, flow: Any) -> float:
        """Rough time until a dropped packet would have left: its flow's queue at its share."""
        spec = self.timeline.spec_at(now)
        return (self.backlog(flow) + 1) * max(1, len(self.rr)) / spec.capacity

    def depart(self, now: float) -> tuple[Any, Any, float | None]:
        """Finish the packet in service; start the next one round robin.

        Returns ``(flow, packet, next_departure_time)``.
        """
        if self.in_service is None:
            raise RuntimeError("depart on an idle link")
        done_flow, done = self.service_flow, self.in_service
        if self.rr:
            flow = self.rr.popleft()
            q = self.queues[flow]
            self.in_service = q.popleft()
            self.service_flow = flow
            if q:
                self.rr.append(flow)
            nxt = now + 1.0 / self.timeline.spec_at(now).capacity
        else:
            self.in_service = None
            self.service_flow = None
            nxt = None
        return done_flow, done, nxt


def enqueue(link: FifoLink | FqLink, packet: Any, now: float, random_draw: float,
            flow: Any = 0) -> EnqueueOutcome:
    """Offer a packet to either link model and return only the outcome."""
    if isinstance(link, FifoLink):
        return link.enqueue(now, random_draw)[0]
    return link.enqueue(now, flow, packet, random_draw)[0]
