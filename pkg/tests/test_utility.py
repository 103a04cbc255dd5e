import math

import pytest
from hypothesis import given, strategies as st

from pcc.utility import (
    GameModel,
    PerformanceMetrics,
    UtilityError,
    UtilityFunctionId,
    analytic_loss,
    analytic_throughput,
    analytic_utility,
    empirical_utility,
    min_alpha,
    sigmoid,
)

# reference values computed with mpmath at 30 digits
SIGMOID_MINUS_005 = 0.993307149075715  # 1/(1+e^-5)
SAFE_T98_L002_X100 = 91.3522644285984554738728811264
LATENCY_T98_L002_X100 = 1453.63623085757528758196609802  # avg 0.05 s, prev 0.04 s
ANALYTIC_U0_40_40_40 = -6.66638083781420926054271059541


def metrics(t, loss, x, rtt=0.03, prev=None):
    return PerformanceMetrics(t, loss, rtt, prev if prev is not None else rtt, x)


class TestSigmoid:
    def test_midpoint(self):
        assert sigmoid(0.0, 100) == 0.5

    def test_reference_value(self):
        assert sigmoid(-0.05, 100) == pytest.approx(SIGMOID_MINUS_005, rel=1e-14)

    def test_limits_clamp_without_overflow(self):
        assert sigmoid(1e6, 100) == 0.0
        assert sigmoid(-1e6, 100) == 1.0

    @pytest.mark.parametrize("y", [math.inf, -math.inf, math.nan])
    def test_rejects_non_finite(self, y):
        with pytest.raises(UtilityError):
            sigmoid(y, 100)

    def test_rejects_non_positive_alpha(self):
        with pytest.raises(UtilityError):
            sigmoid(0.0, 0.0)

    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_decreasing(self, a, b):
        if a < b:
            assert sigmoid(a, 100) >= sigmoid(b, 100)

    @given(st.floats(-3, 3, allow_nan=False))
    def test_open_unit_interval_where_representable(self, y):
        s = sigmoid(y, 1.0)
        assert 0.0 < s < 1.0


class TestAnalytic:
    def test_loss_examples(self):
        assert analytic_loss([30, 40], 100) == 0.0
        assert analytic_loss([100, 100], 100) == 0.5
        assert analytic_loss([60, 60], 100) == pytest.approx(1 / 6)

    def test_loss_empty(self):
        with pytest.raises(UtilityError):
            analytic_loss([], 100)

    def test_throughput_examples(self):
        assert analytic_throughput(50, 0.0) == 50
        assert analytic_throughput(100, 0.5) == 50
        assert analytic_throughput(60, 1 / 6) == pytest.approx(50)

    def test_utility_uncongested(self):
        m = GameModel(100.0, 100.0, 2)
        assert analytic_utility(0, [50, 40], m) == pytest.approx(50 * SIGMOID_MINUS_005, rel=1e-13)

    def test_utility_zero_rate(self):
        m = GameModel(100.0, 100.0, 2)
        assert analytic_utility(0, [0.0, 500.0], m) == 0.0

    def test_utility_overloaded_is_negative(self):
        m = GameModel(100.0, 100.0, 2)
        assert analytic_utility(0, [200, 0], m) < 0

    def test_utility_reference(self):
        m = GameModel(100.0, 100.0, 3)
        assert analytic_utility(0, [40, 40, 40], m) == pytest.approx(ANALYTIC_U0_40_40_40, rel=1e-12)

    def test_bad_index(self):
        with pytest.raises(UtilityError):
            analytic_utility(2, [1.0, 2.0], GameModel(10.0))

    @given(st.lists(st.floats(0, 500), min_size=1, max_size=5), st.sampled_from([2.0, 10.0]))
    def test_homogeneous_degree_one(self, rates, k):
        m = GameModel(100.0, 100.0, len(rates))
        mk = GameModel(100.0 * k, 100.0, len(rates))
        u = analytic_utility(0, rates, m)
        uk = analytic_utility(0, [r * k for r in rates], mk)
        assert uk == pytest.approx(k * u, rel=1e-9, abs=1e-9)

    @given(st.lists(st.floats(0, 300), min_size=2, max_size=5), st.floats(0, 100))
    def test_loss_nondecreasing(self, rates, bump):
        up = [rates[0] + bump] + rates[1:]
        assert analytic_loss(up, 100) >= analytic_loss(rates, 100) - 1e-15

    @given(st.lists(st.floats(0, 300), min_size=1, max_size=5))
    def test_loss_zero_iff_under_capacity(self, rates):
        assert (analytic_loss(rates, 100) == 0.0) == (math.fsum(rates) <= 100)


class TestEmpirical:
    def test_safe_no_loss(self):
        v = empirical_utility("safe", metrics(100, 0.0, 100))
        assert v == 100 * sigmoid(-0.05, 100)
        assert v == pytest.approx(99.33, abs=5e-3)

    def test_safe_reference(self):
        v = empirical_utility(UtilityFunctionId.SAFE, metrics(98, 0.02, 100))
        assert v == pytest.approx(SAFE_T98_L002_X100, rel=1e-13)

    def test_loss_resilient(self):
        assert empirical_utility("loss_resilient", metrics(50, 0.5, 100)) == 25.0

    def test_latency_equal_rtts_is_safe_over_rtt(self):
        m = metrics(80, 0.0, 80, rtt=0.04)
        assert empirical_utility("latency", m) == pytest.approx(
            empirical_utility("safe", m) / 0.04, rel=1e-14
        )

    def test_latency_reference(self):
        m = metrics(98, 0.02, 100, rtt=0.05, prev=0.04)
        assert empirical_utility("latency", m) == pytest.approx(LATENCY_T98_L002_X100, rel=1e-13)

    def test_unknown_id(self):
        with pytest.raises(UtilityError):
            empirical_utility("cubic", metrics(1, 0, 1))

    @pytest.mark.parametrize("kw", [
        dict(throughput=-1.0), dict(loss_rate=1.5), dict(avg_rtt=0.0), dict(prev_avg_rtt=-1.0),
        dict(throughput=math.nan),
    ])
    def test_invalid_metrics(self, kw):
        base = dict(throughput=10.0, loss_rate=0.0, avg_rtt=0.03, prev_avg_rtt=0.03, sent_rate=10.0)
        base.update(kw)
        with pytest.raises(UtilityError):
            PerformanceMetrics(**base)

    def test_throughput_bounded_by_sends(self):
        with pytest.raises(UtilityError):
            PerformanceMetrics(200.0, 0.0, 0.03, 0.03, 100.0, packets_sent=10, duration=0.1)
        PerformanceMetrics(100.0, 0.0, 0.03, 0.03, 100.0, packets_sent=10, duration=0.1)


class TestMinAlpha:
    @pytest.mark.parametrize("n,expected", [(1, 100.0), (2, 100.0), (100, 217.8)])
    def test_values(self, n, expected):
        assert min_alpha(n) == pytest.approx(expected)

    def test_zero(self):
        with pytest.raises(UtilityError):
            min_alpha(0)
