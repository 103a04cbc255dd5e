import pytest
from hypothesis import given, strategies as st

from pcc.monitor import (
    MiSchedule,
    MiState,
    MonitorError,
    MonitorInterval,
    finalize,
    interval_duration,
    open_interval,
    realign,
)


def sched(rtt=0.03):
    return MiSchedule(rtt)


class TestDuration:
    def test_rtt_branch(self):
        assert interval_duration(sched(), 10000, 0.0) == pytest.approx(0.051)

    def test_packet_branch(self):
        assert interval_duration(sched(), 50, 1.0) == pytest.approx(0.2)

    def test_midpoint(self):
        assert interval_duration(sched(), 1e6, 0.5) == pytest.approx(1.95 * 0.03)

    def test_zero_rate(self):
        with pytest.raises(MonitorError):
            interval_duration(sched(), 0.0, 0.5)

    @given(st.floats(0.1, 1e6), st.floats(0, 1), st.floats(0.001, 1.0))
    def test_room_for_min_packets(self, rate, draw, rtt):
        assert interval_duration(sched(rtt), rate, draw) * rate >= 10 - 1e-9

    def test_bad_schedules(self):
        with pytest.raises(MonitorError):
            MiSchedule(0.03, 10, (2.0, 1.0))
        with pytest.raises(MonitorError):
            MiSchedule(0.03, 0)
        with pytest.raises(MonitorError):
            MiSchedule(0.0)


class TestInterval:
    def test_open_at_now(self):
        mi = open_interval(0.0, 1000, sched(), 0.0)
        assert mi.start_time == 0.0
        assert mi.state is MiState.OPEN

    def test_consecutive_intervals_abut(self):
        a = open_interval(0.0, 1000, sched(), 0.3, mi_id=0)
        a.close()
        b = open_interval(a.end_time, 1000, sched(), 0.6, mi_id=1, current=a)
        assert b.start_time == a.end_time

    def test_overlap_rejected(self):
        a = open_interval(0.0, 1000, sched(), 0.3)
        with pytest.raises(MonitorError):
            open_interval(0.01, 1000, sched(), 0.3, current=a)

    def test_counting(self):
        mi = MonitorInterval(0, 100.0, 0.0, 0.1)
        for p in range(10):
            mi.record_send(p, p * 0.01)
        for p in range(9):
            mi.record_ack(p, 0.8 if p == 0 else 0.05)
        mi.record_loss(9)
        assert mi.rtt_sum == pytest.approx(0.8 + 8 * 0.05)
        m = finalize(mi, 1.0)
        assert m.loss_rate == pytest.approx(0.1)
        assert mi.packets_acked + mi.packets_lost == mi.packets_sent

    def test_throughput_and_rtt(self):
        mi = MonitorInterval(0, 2000.0, 0.0, 0.05)
        for p in range(100):
            mi.record_send(p, p * 0.0005)
            mi.record_ack(p, 0.03)
        m = finalize(mi, 0.2)
        assert m.throughput == pytest.approx(2000.0)
        assert m.loss_rate == 0.0
        assert m.avg_rtt == pytest.approx(0.03)
        assert m.sent_rate == 2000.0
        assert mi.state is MiState.FINALIZED

    def test_loss_rate_five_percent(self):
        mi = MonitorInterval(0, 1000.0, 0.0, 0.1)
        for p in range(100):
            mi.record_send(p, 0.0)
            (mi.record_loss if p < 5 else lambda q: mi.record_ack(q, 0.03))(p)
        assert finalize(mi, 1.0).loss_rate == pytest.approx(0.05)

    def test_all_lost_carries_previous_rtt(self):
        mi = MonitorInterval(0, 100.0, 0.0, 0.1, rtt_estimate=0.03)
        for p in range(10):
            mi.record_send(p, 0.0)
            mi.record_loss(p)
        m = finalize(mi, 1.0, prev_avg_rtt=0.042)
        assert m.avg_rtt == 0.042
        assert m.throughput == 0.0 and m.loss_rate == 1.0

    def test_double_resolution(self):
        mi = MonitorInterval(0, 100.0, 0.0, 0.1)
        mi.record_send(1, 0.0)
        mi.record_ack(1, 0.03)
        with pytest.raises(MonitorError):
            mi.record_loss(1)
        with pytest.raises(MonitorError):
            mi.record_ack(7, 0.03)

    def test_unresolved_before_deadline(self):
        mi = MonitorInterval(0, 100.0, 0.0, 0.1, rtt_estimate=0.03)
        mi.record_send(1, 0.0)
        with pytest.raises(MonitorError):
            finalize(mi, 0.2)

    def test_deadline_counts_stragglers_as_lost(self):
        mi = MonitorInterval(0, 100.0, 0.0, 0.1, rtt_estimate=0.03)
        mi.record_send(1, 0.0)
        mi.record_send(2, 0.0)
        mi.record_ack(1, 0.03)
        mi.close()
        assert mi.deadline == pytest.approx(0.1 + 0.2 + 0.12)
        m = finalize(mi, mi.deadline)
        assert m.loss_rate == 0.5

    def test_empty_interval(self):
        with pytest.raises(MonitorError):
            finalize(MonitorInterval(0, 100.0, 0.0, 0.1), 1.0)

    def test_bad_bounds(self):
        with pytest.raises(MonitorError):
            MonitorInterval(0, 1.0, 1.0, 1.0)


class TestRealign:
    def test_starts_at_now_and_abandons(self):
        mi = open_interval(0.0, 1000, sched(), 0.5)
        mi.record_send(0, 0.0)
        new = realign(mi, 0.02, 1500, sched(), 0.5)
        assert new.start_time == 0.02
        assert new.id == mi.id + 1
        assert mi.state is MiState.ABANDONED
        with pytest.raises(MonitorError):
            finalize(mi, 10.0)

    def test_same_rate_is_noop(self):
        mi = open_interval(0.0, 1000, sched(), 0.5)
        assert realign(mi, 0.02, 1000, sched(), 0.5) is mi
        assert mi.state is MiState.OPEN


@given(st.lists(st.sampled_from(["ack", "loss"]), min_size=1, max_size=200))
def test_conservation(outcomes):
    mi = MonitorInterval(0, 100.0, 0.0, 1.0, rtt_estimate=0.03)
    for p, o in enumerate(outcomes):
        mi.record_send(p, 0.0)
    for p, o in enumerate(outcomes):
        if o == "ack":
            mi.record_ack(p, 0.05)
        else:
            mi.record_loss(p)
    m = finalize(mi, 2.0)
    assert mi.packets_acked + mi.packets_lost == mi.packets_sent == len(outcomes)
    assert 0.0 <= m.loss_rate <= 1.0
