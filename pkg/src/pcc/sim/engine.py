"""Discrete-event simulation of rate-controlled senders sharing one bottleneck.

Each sender paces packets at its current rate.  With the FIFO link the fate
of a packet (dropped, or its delivery and ack times) is computed when it is
sent, so a packet costs one heap operation.  Monitor intervals collect those
outcomes immediately, but an interval is only handed to the controller at the
time its last ack or loss notice would actually reach the sender, so the
controller never sees the future.  The fair-queueing link needs real
departure events and resolves packets when they leave the queue.

Loss notices travel like acks: a dropped packet is reported when it would
have been acknowledged had it been delivered.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import asdict
from typing import Any

from ..controller import ControllerConfig, PccController
from ..monitor import MiState, MonitorInterval, finalize, interval_duration
from .aimd import aimd_initial, aimd_on_ack, aimd_on_loss
from .link import QUEUED, DROPPED_BUFFER, FifoLink, FqLink
from .rng import substream
from .scenario import AimdParams, FlowSpec, QueueDiscipline, Scenario
from .trace import (
    DELIVER, DROP_BUFFER, DROP_RANDOM, MI_FINALIZED, PHASE_CHANGE, RATE_CHANGE, SEND,
    TRACE_VERSION, FlowStats, Trace, TraceEvent,
)

# event kinds, in heap order for equal times and sequence numbers
_LINK, _START, _STOP, _FINALIZE, _MI_END, _DEPART, _FEEDBACK, _SEND = range(8)

# smoothing gain for the per-interval RTT average feeding interval lengths
SRTT_GAIN = 0.25


class SimulationError(RuntimeError):
    pass


class _Flow:
    __slots__ = (
        "spec", "idx", "id", "pcc", "extra", "stop", "active", "done",
        "rate", "gap", "last_nominal", "pending_nominal", "token", "next_pid",
        "loss_rng", "ack_rng", "mi_rng", "jit_rng", "stats", "bins", "will_deliver",
        "ctl", "mi", "mi_seq", "srtt", "last_avg_rtt", "sched",
        "aimd_state", "aimd",
    )

    def __init__(self, spec: FlowSpec, idx: int, scenario: Scenario, nbins: int):
        self.spec = spec
        self.idx = idx
        self.id = spec.id
        self.pcc = spec.is_pcc
        self.extra = spec.path_rtt_extra
        self.stop = spec.stop_time if spec.stop_time is not None else scenario.duration
        self.active = False
        self.done = False
        self.rate = 0.0
        self.gap = math.inf
        # paced send times; a packet is released at its nominal time plus jitter
        self.last_nominal = -math.inf
        self.pending_nominal = 0.0
        self.token = 0
        self.next_pid = 0
        seed = scenario.seed
        self.loss_rng = substream(seed, spec.id, "loss")
        self.ack_rng = substream(seed, spec.id, "ack")
        self.mi_rng = substream(seed, spec.id, "mi")
        self.jit_rng = substream(seed, spec.id, "jitter")
        self.stats = FlowStats(spec.id, "pcc" if self.pcc else "aimd", spec.start_time, self.stop)
        self.bins = [0] * nbins
        self.stats.delivered_bins = self.bins
        self.will_deliver = 0
        link0 = scenario.initial_link()
        rtt0 = spec.initial_rtt if spec.initial_rtt is not None else link0.base_rtt + self.extra
        self.srtt = rtt0
        self.last_avg_rtt: float | None = None
        self.mi: MonitorInterval | None = None
        self.mi_seq = 0
        self.ctl: PccController | None = None
        self.sched = None
        self.aimd: AimdParams | None = None
        if self.pcc:
            cfg: ControllerConfig = spec.controller  # type: ignore[assignment]
            self.sched = cfg.mi_schedule
            self.ctl = PccController(cfg, substream(seed, spec.id, "rct"))
        else:
            self.aimd = spec.controller  # type: ignore[assignment]
            self.aimd_state = aimd_initial(self.aimd, rtt0)


class Simulator:
    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        self.duration = scenario.duration
        self.record = scenario.record_packets
        timeline = scenario.timeline
        self.fq = timeline[0][1].queue_discipline is QueueDiscipline.PER_FLOW_FQ
        self.link = FqLink(timeline) if self.fq else FifoLink(timeline)
        self.nbins = int(math.ceil(self.duration))
        self.send_jitter = scenario.send_jitter
        self.flows = [_Flow(spec, i, scenario, self.nbins) for i, spec in enumerate(scenario.flows)]
        self.heap: list = []
        self.seq = 0
        self.events: list[TraceEvent] = []

    # heap helpers

    def _push(self, t: float, kind: int, fi: int, arg: Any) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, kind, fi, arg))

    def _emit(self, t: float, kind: str, f: _Flow, data: tuple) -> None:
        self.events.append(TraceEvent(t, kind, f.id, data))

    # rate and interval management

    def _jitter(self, f: _Flow) -> float:
        if not self.send_jitter:
            return 0.0
        tl = self.link.timeline
        return f.jit_rng.random() * self.send_jitter / tl.caps[tl.k]

    def _schedule_send(self, f: _Flow, now: float) -> None:
        """Queue the next paced send after a rate change or start."""
        f.token += 1
        nominal = f.last_nominal + f.gap
        if nominal < now:
            nominal = now
        if nominal < f.stop:
            f.pending_nominal = nominal
            self._push(nominal + self._jitter(f), _SEND, f.idx, f.token)

    def _set_rate(self, f: _Flow, now: float, rate: float) -> None:
        if rate == f.rate:
            return
        f.rate = rate
        f.gap = 1.0 / rate
        self._schedule_send(f, now)
        if f.pcc:
            self._emit(now, RATE_CHANGE, f, (rate,))

    def _open_mi(self, f: _Flow, now: float) -> None:
        rate, tag = f.ctl.rate_for_new_interval()
        draw = f.mi_rng.random()
        sched = f.sched
        dur = interval_duration(sched, rate, draw)
        mi = MonitorInterval(f.mi_seq, rate, now, now + dur, tag, sched.rtt_estimate)
        f.mi_seq += 1
        f.mi = mi
        self._push(now + dur, _MI_END, f.idx, mi)
        self._set_rate(f, now, rate)

    def _abandon_current(self, f: _Flow) -> None:
        mi = f.mi
        if mi is not None and mi.state is MiState.OPEN:
            mi.state = MiState.ABANDONED
            f.stats.mi_abandoned_packets += mi.packets_sent
            f.ctl.on_interval_discarded(mi.tag)
        f.mi = None

    def _schedule_finalize(self, mi: MonitorInterval, fi: int, now: float) -> None:
        if mi.complete:
            t = mi.finalize_time()
        else:
            t = mi.deadline
        self._push(t if t > now else now, _FINALIZE, fi, mi)

    def _on_finalize(self, f: _Flow, mi: MonitorInterval, now: float) -> None:
        if mi.state is not MiState.AWAITING_FEEDBACK:
            return
        if not mi.complete and now < mi.deadline:
            return
        metrics = finalize(mi, now, f.last_avg_rtt)
        f.stats.mi_finalized_packets += mi.packets_sent
        f.last_avg_rtt = metrics.avg_rtt
        if mi.packets_acked:
            f.srtt += SRTT_GAIN * (metrics.avg_rtt - f.srtt)
            f.sched = f.sched.with_rtt(f.srtt)
        ctl = f.ctl
        u = ctl.utility(metrics)
        self._emit(now, MI_FINALIZED, f, (
            mi.id, mi.start_time, mi.end_time, mi.commanded_rate, mi.packets_sent,
            mi.packets_acked, mi.packets_lost, metrics.throughput, metrics.loss_rate,
            metrics.avg_rtt, u,
        ))
        if not f.active:
            return
        old_phase, old_eps = ctl.phase, ctl.state.epsilon
        ctl.on_mi_finalized(mi.tag, metrics)
        if ctl.phase is not old_phase or ctl.state.epsilon != old_eps:
            self._emit(now, PHASE_CHANGE, f, (ctl.phase.value, ctl.rate, ctl.state.epsilon))
        if ctl.realign:
            ctl.realign = False
            self._abandon_current(f)
            self._open_mi(f, now)

    # AIMD baseline

    def _aimd_feedback(self, f: _Flow, now: float, sample: float) -> None:
        if sample >= 0.0:
            st = f.aimd_state = aimd_on_ack(f.aimd_state, f.aimd, sample)
        else:
            st = f.aimd_state = aimd_on_loss(f.aimd_state, f.aimd, now)
        f.rate = st.rate
        f.gap = 1.0 / f.rate

    # flow lifecycle

    def _start(self, f: _Flow, now: float) -> None:
        f.active = True
        if f.pcc:
            self._open_mi(f, now)
        else:
            f.rate = f.aimd_state.rate
            f.gap = 1.0 / f.rate
            self._schedule_send(f, now)

    def _finish(self, f: _Flow, now: float) -> None:
        if not f.active:
            return
        f.active = False
        f.token += 1
        if f.pcc:
            self._abandon_current(f)

    # main loop

    def run(self) -> Trace:
        sc = self.scenario
        for k, (t, _spec) in enumerate(sc.timeline):
            if k:
                self._push(t, _LINK, -1, k)
        for f in self.flows:
            self._push(f.spec.start_time, _START, f.idx, None)
            self._push(f.stop, _STOP, f.idx, None)
        if self.fq:
            self._loop_fq()
        else:
            self._loop_fifo()
        return self._build_trace()

    def _deliver_bin(self, f: _Flow, arrive: float) -> None:
        if arrive < self.duration:
            f.stats.delivered += 1
            f.bins[int(arrive)] += 1

    def _loop_fifo(self) -> None:
        heap = self.heap
        pop = heapq.heappop
        push = heapq.heappush
        flows = self.flows
        link = self.link
        tl = link.timeline
        enqueue = link.enqueue
        duration = self.duration
        record = self.record
        events = self.events
        jitter = self.send_jitter
        caps = tl.caps
        while heap:
            t, _, kind, fi, arg = pop(heap)
            if t >= duration:
                break
            if kind == _SEND:
                f = flows[fi]
                if arg != f.token:
                    continue
                pid = f.next_pid
                f.next_pid = pid + 1
                f.last_nominal = f.pending_nominal
                st = f.stats
                st.sent += 1
                outcome, dep = enqueue(t, f.loss_rng.random())
                spec = tl.specs[tl.k]
                prop = spec.prop_delay
                if outcome is QUEUED:
                    arrive = dep + prop
                    ack = arrive + prop + f.extra
                    f.will_deliver += 1
                    if arrive < duration:
                        st.delivered += 1
                        f.bins[int(arrive)] += 1
                    acked = not (spec.ack_loss and f.ack_rng.random() < spec.ack_loss)
                    if f.pcc:
                        mi = f.mi
                        mi.packets_sent += 1
                        if acked:
                            mi.packets_acked += 1
                            mi.rtt_sum += ack - t
                            if ack > mi.resolved_by:
                                mi.resolved_by = ack
                        else:
                            mi.outstanding.add(pid)
                            mi.silent += 1
                    elif acked:
                        self.seq += 1
                        push(heap, (ack, self.seq, _FEEDBACK, fi, ack - t))
                    if not acked:
                        st.ack_lost += 1
                    if record:
                        events.append(TraceEvent(t, SEND, f.id, (pid,)))
                        if arrive < duration:
                            events.append(TraceEvent(arrive, DELIVER, f.id, (pid,)))
                else:
                    notice = dep + 2.0 * prop + f.extra
                    if outcome is DROPPED_BUFFER:
                        st.drop_buffer += 1
                    else:
                        st.drop_random += 1
                    if f.pcc:
                        mi = f.mi
                        mi.packets_sent += 1
                        mi.packets_lost += 1
                        if notice > mi.resolved_by:
                            mi.resolved_by = notice
                    else:
                        self.seq += 1
                        push(heap, (notice, self.seq, _FEEDBACK, fi, -1.0))
                    if record:
                        events.append(TraceEvent(t, SEND, f.id, (pid,)))
                        events.append(TraceEvent(
                            t, DROP_BUFFER if outcome is DROPPED_BUFFER else DROP_RANDOM,
                            f.id, (pid,)))
                size = f.spec.size_packets
                if size is not None and f.will_deliver >= size:
                    f.done = True
                    st.completion_time = arrive if outcome is QUEUED else None
                    self._finish(f, t)
                    continue
                nominal = f.last_nominal + f.gap
                if nominal < f.stop:
                    f.pending_nominal = nominal
                    if jitter:
                        nominal += f.jit_rng.random() * jitter / caps[tl.k]
                    if nominal < t:
                        nominal = t
                    self.seq += 1
                    push(heap, (nominal, self.seq, _SEND, fi, arg))
            elif kind == _FEEDBACK:
                f = flows[fi]
                if f.active:
                    self._aimd_feedback(f, t, arg)
            else:
                self._control_event(t, kind, fi, arg)

    def _loop_fq(self) -> None:
        heap = self.heap
        pop = heapq.heappop
        flows = self.flows
        link: FqLink = self.link  # type: ignore[assignment]
        duration = self.duration
        record = self.record
        events = self.events
        while heap:
            t, _, kind, fi, arg = pop(heap)
            if t >= duration:
                break
            if kind == _SEND:
                f = flows[fi]
                if arg != f.token:
                    continue
                pid = f.next_pid
                f.next_pid = pid + 1
                f.last_nominal = f.pending_nominal
                st = f.stats
                st.sent += 1
                mi = f.mi
                if f.pcc:
                    mi.outstanding.add(pid)
                    mi.packets_sent += 1
                packet = (pid, t, mi)
                outcome, dep = link.enqueue(t, fi, packet, f.loss_rng.random())
                if record:
                    events.append(TraceEvent(t, SEND, f.id, (pid,)))
                if outcome is QUEUED:
                    if dep is not None:
                        self._push(dep, _DEPART, -1, None)
                else:
                    spec = link.timeline.spec_at(t)
                    notice = t + link.drop_delay(t, fi) + 2.0 * spec.prop_delay + f.extra
                    if outcome is DROPPED_BUFFER:
                        st.drop_buffer += 1
                    else:
                        st.drop_random += 1
                    if record:
                        events.append(TraceEvent(
                            t, DROP_BUFFER if outcome is DROPPED_BUFFER else DROP_RANDOM,
                            f.id, (pid,)))
                    if f.pcc:
                        mi.record_loss(pid, notice)
                    else:
                        self._push(notice, _FEEDBACK, fi, -1.0)
                nominal = f.last_nominal + f.gap
                if nominal < f.stop:
                    f.pending_nominal = nominal
                    nominal += self._jitter(f)
                    self._push(nominal if nominal > t else t, _SEND, fi, arg)
            elif kind == _DEPART:
                done_fi, packet, nxt = link.depart(t)
                if nxt is not None:
                    self._push(nxt, _DEPART, -1, None)
                f = flows[done_fi]
                pid, sent_at, mi = packet
                spec = link.timeline.spec_at(t)
                arrive = t + spec.prop_delay
                ack = arrive + spec.prop_delay + f.extra
                f.will_deliver += 1
                self._deliver_bin(f, arrive)
                if record and arrive < duration:
                    events.append(TraceEvent(arrive, DELIVER, f.id, (pid,)))
                acked = not (spec.ack_loss and f.ack_rng.random() < spec.ack_loss)
                if not acked:
                    f.stats.ack_lost += 1
                if f.pcc:
                    if mi.state is MiState.FINALIZED or mi.state is MiState.ABANDONED:
                        pass
                    elif acked:
                        mi.record_ack(pid, ack - sent_at, ack)
                        if mi.complete:
                            self._schedule_finalize(mi, done_fi, t)
                    else:
                        mi.record_silent(pid)
                        if mi.complete:
                            self._schedule_finalize(mi, done_fi, t)
                elif acked:
                    self._push(ack, _FEEDBACK, done_fi, ack - sent_at)
                size = f.spec.size_packets
                if size is not None and f.will_deliver >= size and not f.done:
                    f.done = True
                    f.stats.completion_time = arrive
                    self._finish(f, t)
            elif kind == _FEEDBACK:
                f = flows[fi]
                if f.active:
                    self._aimd_feedback(f, t, arg)
            else:
                self._control_event(t, kind, fi, arg)

    def _control_event(self, t: float, kind: int, fi: int, arg: Any) -> None:
        if kind == _MI_END:
            f = self.flows[fi]
            mi = arg
            if f.mi is not mi or not f.active:
                return
            mi.close()
            if mi.packets_sent == 0:
                mi.state = MiState.ABANDONED
                f.ctl.on_interval_discarded(mi.tag)
            else:
                self._schedule_finalize(mi, fi, t)
            self._open_mi(f, t)
        elif kind == _FINALIZE:
            self._on_finalize(self.flows[fi], arg, t)
        elif kind == _START:
            self._start(self.flows[fi], t)
        elif kind == _STOP:
            self._finish(self.flows[fi], t)
        elif kind == _LINK:
            pass  # link parameters are looked up by time; nothing to do
        else:
            raise SimulationError(f"unknown event kind {kind}")

    def _build_trace(self) -> Trace:
        sc = self.scenario
        flows: dict[int, FlowStats] = {}
        for f in self.flows:
            st = f.stats
            st.in_flight = st.sent - st.delivered - st.drop_buffer - st.drop_random
            if f.pcc:
                st.mi_pending_packets = (st.sent - st.mi_finalized_packets
                                         - st.mi_abandoned_packets)
            flows[f.id] = st
        self.events.sort(key=lambda e: e.time)
        header = {
            "version": TRACE_VERSION,
            "seed": sc.seed,
            "duration": sc.duration,
            "packet_size": sc.packet_size,
            "send_jitter": sc.send_jitter,
            "link": [
                {"time": t, "capacity": s.capacity, "prop_delay": s.prop_delay,
                 "buffer_packets": s.buffer_packets, "random_loss": s.random_loss,
                 "ack_loss": s.ack_loss, "queue_discipline": s.queue_discipline.value}
                for t, s in sc.timeline
            ],
            "flows": [_flow_header(f) for f in sc.flows],
        }
        return Trace(header, self.events, flows)


def _flow_header(spec: FlowSpec) -> dict:
    out: dict = {"id": spec.id, "start_time": spec.start_time, "stop_time": spec.stop_time,
                 "path_rtt_extra": spec.path_rtt_extra, "initial_rtt": spec.initial_rtt,
                 "size_packets": spec.size_packets}
    c = spec.controller
    if isinstance(c, ControllerConfig):
        out["controller"] = {
            "kind": "pcc",
            "utility": c.utility.value,
            "epsilon_min": c.epsilon_min,
            "epsilon_max": c.epsilon_max,
            "rct_pairs": c.rct_pairs,
            "rtt_estimate": c.mi_schedule.rtt_estimate,
            "rtt_multiplier_range": list(c.mi_schedule.rtt_multiplier_range),
            "min_packets": c.mi_schedule.min_packets,
        }
    else:
        out["controller"] = {"kind": "aimd", **asdict(c)}
    return out


def run(scenario: Scenario) -> Trace:
    """Simulate ``scenario`` and return its trace.  Same scenario and seed, same trace."""
    return Simulator(scenario).run()
