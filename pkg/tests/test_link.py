import random

import pytest
from hypothesis import given, settings, strategies as st

from pcc.sim.link import (
    DROPPED_BUFFER,
    DROPPED_RANDOM,
    QUEUED,
    FifoLink,
    FqLink,
    enqueue,
)
from pcc.sim.scenario import LinkSpec


def fifo(cap=100.0, buf=3, loss=0.0, prop=0.01):
    return FifoLink(((0.0, LinkSpec(cap, prop, buf, loss)),))


class TestFifo:
    def test_empty_queue_serves_immediately(self):
        link = fifo()
        out, dep = link.enqueue(1.0, 0.5)
        assert out is QUEUED
        assert dep == pytest.approx(1.01)

    def test_full_buffer_drops(self):
        link = fifo(buf=3)
        outs = [link.enqueue(0.0, 0.5)[0] for _ in range(5)]
        # one in service plus three waiting
        assert outs == [QUEUED] * 4 + [DROPPED_BUFFER]

    def test_random_loss_regardless_of_queue(self):
        link = fifo(loss=0.2)
        assert link.enqueue(0.0, 0.1)[0] is DROPPED_RANDOM
        assert link.enqueue(0.0, 0.3)[0] is QUEUED

    def test_drop_reports_hypothetical_departure(self):
        link = fifo(buf=1)
        link.enqueue(0.0, 0.5)
        link.enqueue(0.0, 0.5)
        out, dep = link.enqueue(0.0, 0.5)
        assert out is DROPPED_BUFFER and dep == pytest.approx(0.03)

    def test_queue_drains_at_new_capacity(self):
        link = FifoLink(((0.0, LinkSpec(100.0, 0.0, 10)), (0.015, LinkSpec(50.0, 0.0, 10))))
        deps = [link.enqueue(0.0, 0.5)[1] for _ in range(3)]
        # 1.5 packets of work done by t=0.015, the rest at 50 pkt/s
        assert deps == pytest.approx([0.01, 0.015 + 0.5 / 50, 0.015 + 1.5 / 50])

    @settings(max_examples=60)
    @given(st.lists(st.floats(0.0, 0.005), min_size=1, max_size=400), st.integers(1, 8))
    def test_occupancy_bound_and_order(self, gaps, buf):
        link = fifo(cap=1000.0, buf=buf)
        t, last = 0.0, -1.0
        for g in gaps:
            t += g
            out, dep = link.enqueue(t, 0.5)
            if out is QUEUED:
                assert dep > last  # FIFO: departures follow arrival order
                last = dep
            assert link.waiting_at(t) <= buf
        assert link.max_waiting <= buf

    def test_work_conservation_bound(self):
        link = fifo(cap=1000.0, buf=50)
        rng = random.Random(1)
        deps = []
        t = 0.0
        for _ in range(5000):
            t += rng.expovariate(1500.0)
            out, dep = link.enqueue(t, 0.5)
            if out is QUEUED:
                deps.append(dep)
        # any window of >= 100 service times carries at most capacity * window (+1)
        for k in range(0, len(deps) - 200, 97):
            w = deps[k + 200] - deps[k]
            assert 200 <= 1000.0 * w + 1 + 1e-6


class TestFq:
    def test_two_backlogged_flows_alternate(self):
        link = FqLink(((0.0, LinkSpec(100.0, 0.0, 40)),))
        first = None
        for k in range(20):
            for f in (0, 1):
                out, dep = link.enqueue(0.0, f, (f, k), 0.5)
                first = first or dep
        served = []
        t = first
        while True:
            flow, _, nxt = link.depart(t)
            served.append(flow)
            if nxt is None:
                break
            t = nxt
        counts = [served[:k].count(0) - served[:k].count(1) for k in range(1, len(served) + 1)]
        assert max(abs(c) for c in counts) <= 1

    def test_single_flow_gets_everything(self):
        link = FqLink(((0.0, LinkSpec(100.0, 0.0, 40)),))
        _, dep = link.enqueue(0.0, 0, "a", 0.5)
        link.enqueue(0.0, 0, "b", 0.5)
        flow, pkt, nxt = link.depart(dep)
        assert (flow, pkt) == (0, "a") and nxt == pytest.approx(0.02)

    def test_buffer_share(self):
        link = FqLink(((0.0, LinkSpec(100.0, 0.0, 4)),))
        link.enqueue(0.0, 0, "x", 0.5)  # in service
        for k in range(2):
            assert link.enqueue(0.0, 1, k, 0.5)[0] is QUEUED
            assert link.enqueue(0.0, 2, k, 0.5)[0] is QUEUED
        # two backlogged flows share 4 slots: 2 each
        assert link.enqueue(0.0, 1, 9, 0.5)[0] is DROPPED_BUFFER

    def test_random_loss(self):
        link = FqLink(((0.0, LinkSpec(100.0, 0.0, 4, 0.5)),))
        assert enqueue(link, "p", 0.0, 0.2, flow=3) is DROPPED_RANDOM

    def test_depart_idle(self):
        with pytest.raises(RuntimeError):
            FqLink(((0.0, LinkSpec(100.0, 0.0, 4)),)).depart(0.0)

    def test_residual_split_between_backlogged_flows(self):
        cap = 100.0
        link = FqLink(((0.0, LinkSpec(cap, 0.0, 60)),))
        served = {0: 0, 1: 0, 2: 0}
        nxt = None
        # flows 0 and 1 are always backlogged, flow 2 offers one packet per 10 service times
        for k in range(20):
            for f in (0, 1):
                _, d = link.enqueue(0.0, f, k, 0.5)
                nxt = nxt or d
        t = nxt
        arrivals = [i * 10 / cap for i in range(1, 100)]
        while t is not None and t < 10.0:
            while arrivals and arrivals[0] <= t:
                a = arrivals.pop(0)
                _, d = link.enqueue(a, 2, a, 0.5)
                assert d is None
            flow, _, t = link.depart(t)
            served[flow] += 1
            if flow in (0, 1):
                link.enqueue(t, flow, "more", 0.5)
        total = sum(served.values())
        assert served[2] == pytest.approx(total / 10, abs=2)
        assert abs(served[0] - served[1]) <= 1
