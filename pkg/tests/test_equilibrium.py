import numpy as np
import pytest

from pcc.equilibrium import (
    RATE_FLOOR,
    best_response,
    default_resolution,
    find_equilibrium,
    run_dynamics,
)
from pcc.utility import GameModel, analytic_utility, min_alpha

# symmetric first-order condition solved with mpmath findroot (30 digits)
X_HAT = {(3, 100.0): 33.462719062440835, (4, 100.0): 25.274416524252589}


class TestBestResponse:
    def test_single_sender_sits_on_the_capacity_kink(self):
        # mpmath: one-sided derivatives at x=C are +0.99331 (left) and -1.66481 (right)
        m = GameModel(100.0, 100.0, 1)
        x = best_response(0, np.array([50.0]), m)
        assert x == pytest.approx(100.0, abs=2 * default_resolution(m))
        assert x < 2000.0 / 19.0

    def test_crowded_link_gives_floor(self):
        m = GameModel(100.0, 100.0, 2)
        assert best_response(0, np.array([1.0, 1000.0]), m) == pytest.approx(RATE_FLOOR)

    def test_scaling(self):
        m1 = GameModel(100.0, 100.0, 3)
        m10 = GameModel(1000.0, 100.0, 3)
        a = best_response(0, np.array([0.0, 30.0, 40.0]), m1)
        b = best_response(0, np.array([0.0, 300.0, 400.0]), m10)
        assert b == pytest.approx(10 * a, abs=2 * default_resolution(m10))

    def test_no_grid_point_beats_it(self):
        m = GameModel(100.0, 100.0, 3)
        x = np.array([0.0, 33.0, 34.0])
        br = best_response(0, x, m)
        grid = np.linspace(RATE_FLOOR, 200.0, 20001)
        best = max(analytic_utility(0, [g, 33.0, 34.0], m) for g in grid)
        assert analytic_utility(0, [br, 33.0, 34.0], m) >= best - 1e-9


class TestEquilibrium:
    @pytest.mark.parametrize("n", [3, 4])
    def test_matches_first_order_condition(self, n):
        m = GameModel(100.0, min_alpha(n), n)
        sol = find_equilibrium(m)
        assert sol.fair
        assert sol.x_hat == pytest.approx(X_HAT[(n, 100.0)], abs=2 * sol.resolution)
        assert sol.in_region

    @pytest.mark.parametrize("n", [3, 4])
    def test_steeper_sigmoid(self, n):
        sol = find_equilibrium(GameModel(100.0, 2 * min_alpha(n), n))
        assert sol.fair and sol.in_region

    def test_unique_from_different_starts(self):
        m = GameModel(100.0, 100.0, 3)
        a = find_equilibrium(m, x0=[90.0, 5.0, 5.0])
        b = find_equilibrium(m, x0=[10.0, 20.0, 70.0])
        assert np.abs(a.rates - b.rates).max() < 2 * a.resolution

    def test_homogeneous(self):
        a = find_equilibrium(GameModel(100.0, 100.0, 3))
        b = find_equilibrium(GameModel(1000.0, 100.0, 3))
        assert b.x_hat == pytest.approx(10 * a.x_hat, rel=1e-4)

    def test_alpha_precondition(self):
        with pytest.raises(ValueError):
            find_equilibrium(GameModel(100.0, 50.0, 2))

    def test_two_senders_have_a_continuum(self):
        # the kink at the capacity makes every split near C/2 a best-response fixed point
        m = GameModel(100.0, 100.0, 2)
        for split in (40.0, 50.0, 60.0):
            x = np.array([split, 100.0 - split])
            assert abs(best_response(0, x, m) - split) < 1e-2


class TestDynamics:
    def test_converges_into_band(self):
        m = GameModel(100.0, 100.0, 3)
        traj = run_dynamics(m, [80.0, 15.0, 5.0], 0.01, 3000)
        assert traj.converged_at is not None
        lo, hi = traj.band
        assert lo == pytest.approx(traj.x_hat * 0.99 ** 2)
        assert hi == pytest.approx(traj.x_hat * 1.01 ** 2)

    def test_start_at_equilibrium_stays(self):
        m = GameModel(100.0, 100.0, 3)
        xh = X_HAT[(3, 100.0)]
        traj = run_dynamics(m, [xh] * 3, 0.01, 500, x_hat=xh)
        assert traj.converged_at == 0
        lo, hi = traj.band
        assert ((traj.steps > lo) & (traj.steps < hi)).all()

    def test_large_flow_moves_down_small_moves_up(self):
        m = GameModel(100.0, 100.0, 2)
        traj = run_dynamics(m, [90.0, 10.0], 0.01, 1, x_hat=50.0)
        assert traj.steps[1][0] < 90.0 and traj.steps[1][1] > 10.0

    def test_follows_rule_exactly(self):
        m = GameModel(100.0, 100.0, 3)
        traj = run_dynamics(m, [50.0, 30.0, 20.0], 0.02, 50, x_hat=33.46)
        ratios = traj.steps[1:] / traj.steps[:-1]
        assert np.all(np.isclose(ratios, 1.02) | np.isclose(ratios, 0.98))

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            run_dynamics(GameModel(100.0), [1.0, 1.0], 0.2, 10, x_hat=1.0)
