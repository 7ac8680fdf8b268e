"""Oracle checks, including an independent numerical-integration oracle for
the exponential environment."""
import math

import numpy as np
import pytest
from scipy import integrate, optimize

from pacesim.auction import AuctionSample, LinearAllocation, SecondPrice
from pacesim.environments import (AdversarialInstance, EmpiricalEnv, ExponentialSecondPriceEnv,
                                  UniformSecondPriceEnv, campaign_fleet)
from pacesim.oracle import (AssumptionViolation, NoCrossingError, OracleError, closed_form_crossings,
                            crossing_points, dual_function, expected_gradients, fluid_benchmark,
                            offline_opt_small, optimal_value_per_round)


def quad_gradients(k, value_mean=0.5, bid_mean=1.0, rho=9 / 16):
    """E[p] and E[v x] by double integration over the exponential densities."""
    a, c = 1 / value_mean, 1 / bid_mean

    def inner_pay(v):
        return integrate.quad(lambda d: d * c * math.exp(-c * d), 0, k * v)[0]

    def inner_win(v):
        return 1 - math.exp(-c * k * v)

    pay = integrate.quad(lambda v: a * math.exp(-a * v) * inner_pay(v), 0, np.inf)[0]
    val = integrate.quad(lambda v: a * math.exp(-a * v) * v * inner_win(v), 0, np.inf)[0]
    return rho - pay, val - pay


def quad_crossings():
    k_b = optimize.brentq(lambda k: quad_gradients(k)[0], 1.0, 20.0, xtol=1e-10)
    k_r = optimize.brentq(lambda k: quad_gradients(k)[1], 1.5, 20.0, xtol=1e-10)
    return k_b, k_r


class TestExpectedGradients:
    @pytest.mark.parametrize("env", [ExponentialSecondPriceEnv(), AdversarialInstance()],
                             ids=lambda e: e.name)
    def test_zero_multiplier(self, env):
        g = expected_gradients(env, 0.0, n_samples=1000)
        assert g.g_budget == env.rho and g.g_ros == 0.0

    def test_adversarial_at_two(self):
        g = expected_gradients(AdversarialInstance(), 2.0, n_samples=10)
        assert g.g_ros == 0.0 and g.g_budget == pytest.approx(1.4)

    def test_exponential_root_at_four(self):
        g = expected_gradients(ExponentialSecondPriceEnv(), 4.0, n_samples=10**6)
        assert abs(g.g_ros) <= 3 * g.se_ros

    def test_seeded(self):
        env = ExponentialSecondPriceEnv()
        assert expected_gradients(env, 2.0, 1000, seed=3) == expected_gradients(env, 2.0, 1000, seed=3)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            expected_gradients(AdversarialInstance(), -1.0)
        with pytest.raises(ValueError):
            expected_gradients(AdversarialInstance(), 1.0, n_samples=0)


class TestCrossings:
    def test_adversarial_ros(self):
        c = crossing_points(AdversarialInstance(), n_samples=1)
        assert c.k_ros == pytest.approx(2.0, abs=1e-4)
        assert c.k_budget == pytest.approx(math.sqrt(15.2), abs=1e-4)
        assert c.binding == "ros"

    @pytest.mark.parametrize("mu0", [0.5, 1.0, 2.0])
    def test_adversarial_budget(self, mu0):
        c = crossing_points(AdversarialInstance("budget", mu0=mu0), n_samples=1)
        assert c.k_budget == pytest.approx(1 / (5 * mu0**2), abs=1e-4)
        assert c.binding == "budget"

    def test_quadrature_oracle_matches_closed_form(self):
        k_b, k_r = quad_crossings()
        cf = closed_form_crossings(ExponentialSecondPriceEnv())
        assert cf.k_budget == pytest.approx(k_b, abs=1e-7)
        assert cf.k_ros == pytest.approx(k_r, abs=1e-7)
        assert k_r == pytest.approx(4.0, abs=1e-7) and k_b == pytest.approx(6.0, abs=1e-7)

    def test_exponential_monte_carlo_matches_quadrature(self):
        k_b, k_r = quad_crossings()
        c = crossing_points(ExponentialSecondPriceEnv(), n_samples=200_000, seed=1)
        assert abs(c.k_budget - k_b) <= 3 * c.se_budget + 1e-4
        assert abs(c.k_ros - k_r) <= 3 * c.se_ros + 1e-4

    def test_seed_invariance(self):
        env = ExponentialSecondPriceEnv()
        a = crossing_points(env, n_samples=100_000, seed=1)
        b = crossing_points(env, n_samples=100_000, seed=2)
        assert abs(a.k_ros - b.k_ros) <= 3 * math.hypot(a.se_ros, b.se_ros) + 2e-4
        assert abs(a.k_budget - b.k_budget) <= 3 * math.hypot(a.se_budget, b.se_budget) + 2e-4

    def test_sign_structure(self):
        env = ExponentialSecondPriceEnv()
        k_b, k_r = 6.0, 4.0
        from pacesim.oracle import _GradientCurves
        curve = _GradientCurves(env, 200_000, 0)
        for k in np.linspace(0.5, 12, 24):
            g = curve.at(k)
            if abs(k - k_b) > 0.5:
                assert np.sign(g.g_budget) == np.sign(k_b - k) and abs(g.g_budget) > 3 * g.se_budget
            if abs(k - k_r) > 0.5:
                assert np.sign(g.g_ros) == np.sign(k_r - k) and abs(g.g_ros) > 3 * g.se_ros

    def test_no_crossing(self):
        with pytest.raises(NoCrossingError, match="ros"):
            crossing_points(UniformSecondPriceEnv(), n_samples=10_000)
        c = crossing_points(UniformSecondPriceEnv(), n_samples=10_000, allow_missing=True)
        assert c.k_ros == math.inf and c.binding == "budget"

    def test_multiple_crossings(self):
        class Wiggly:
            rho = 1.0
            def mc_draws(self, n, rng):
                return n
            def mc_outcomes(self, n, k):
                p = 1.0 + math.sin(3 * k)
                return np.full(n, 0.0), np.full(n, p)
        with pytest.raises(AssumptionViolation):
            crossing_points(Wiggly(), n_samples=1)

    def test_bad_tolerance(self):
        with pytest.raises(ValueError):
            crossing_points(AdversarialInstance(), tolerance=0)

    def test_optimal_duals(self):
        c = crossing_points(AdversarialInstance(), n_samples=1)
        lam, mu = c.optimal_duals()
        assert lam == pytest.approx(1.0, abs=1e-3) and mu == 0


class TestDualFunction:
    def test_ros_binding_value(self):
        d = dual_function(AdversarialInstance(), 1.0, 0.0, n_samples=1)
        assert d.value == pytest.approx(0.5)

    def test_budget_binding_value(self):
        env = AdversarialInstance("budget", mu0=1.0)
        k_b = 0.2
        d = dual_function(env, 0.0, 1 / k_b, n_samples=1)
        assert d.value == pytest.approx(k_b / 4)

    def test_unbounded(self):
        with pytest.raises(OracleError):
            dual_function(AdversarialInstance(), 0.0, 0.0)

    @pytest.mark.parametrize("env", [AdversarialInstance(), ExponentialSecondPriceEnv()],
                             ids=lambda e: e.name)
    def test_minimal_at_optimum(self, env):
        c = closed_form_crossings(env)
        lam, mu = c.optimal_duals()
        base = dual_function(env, lam, mu, n_samples=200_000)
        for dl, dm in [(0.1, 0.0), (0.0, 0.1), (0.1, 0.1)]:
            other = dual_function(env, lam + dl, mu + dm, n_samples=200_000)
            assert other.value >= base.value - 3 * math.hypot(base.stderr, other.stderr)

    def test_optimal_value_per_round(self):
        env = ExponentialSecondPriceEnv()
        est = optimal_value_per_round(env, closed_form_crossings(env), n_samples=10**6)
        assert abs(est.value - (0.5 - 2 / 36)) < 4 * est.stderr


class TestFluidBenchmark:
    conv = staticmethod(lambda k: 0.5 * min(k, 1.0))
    spend = staticmethod(lambda k: 0.4 * k * k)

    def test_budget_binding(self):
        b = fluid_benchmark(conv=self.conv, spend=self.spend, rho=0.4, k_max=10)
        assert b.k_star == pytest.approx(1.0, abs=1e-6) and b.binding == "budget"
        assert b.conv_star == pytest.approx(0.5, abs=1e-6)

    def test_ros_binding(self):
        b = fluid_benchmark(conv=self.conv, spend=self.spend, rho=10, k_max=10)
        assert b.k_star == pytest.approx(math.sqrt(1.25), abs=1e-6) and b.binding == "ros"
        assert b.conv_star == pytest.approx(0.5) and b.spend_star == pytest.approx(0.5, abs=1e-6)

    def test_origin_feasible(self):
        assert self.conv(0) == 0 and self.spend(0) == 0

    def test_flat_curves(self):
        b = fluid_benchmark(conv=lambda k: 1.0, spend=lambda k: 0.0, rho=1, k_max=3)
        assert b.k_star == 3 and b.binding is None

    def test_binding_certificate(self):
        for c in campaign_fleet(20, seed=1):
            b = fluid_benchmark(c)
            assert b.spend_star <= c.rho + 1e-9 and b.conv_star >= b.spend_star - 1e-9
            k = b.k_star + 1e-5
            assert float(c.spend(k)) > c.rho or float(c.conv(k)) < float(c.spend(k))

    def test_needs_inputs(self):
        with pytest.raises(ValueError):
            fluid_benchmark(conv=self.conv)


class TestOfflineOpt:
    def test_single_winning_round(self):
        assert offline_opt_small([AuctionSample(0.5, SecondPrice(0.4))], 1.0) == pytest.approx(0.5)

    def test_adversarial_instance(self):
        s = AuctionSample(1.0, LinearAllocation(4.0), normalized=False)
        assert offline_opt_small([s, s], 1.9) == pytest.approx(1.0)

    def test_infeasible_win(self):
        assert offline_opt_small([AuctionSample(0.5, SecondPrice(0.6))], 1.0) == 0.0

    def test_cross_subsidy(self):
        # a cheap win funds an expensive one
        rounds = [AuctionSample(1.0, SecondPrice(0.2)), AuctionSample(0.5, SecondPrice(0.9))]
        assert offline_opt_small(rounds, 10.0) == pytest.approx(1.5)
        assert offline_opt_small(rounds, 0.5) == pytest.approx(1.0)

    def test_ros_slack_admits_small_violation(self):
        rounds = [AuctionSample(0.5, SecondPrice(0.6))]
        assert offline_opt_small(rounds, 1.0, ros_slack=0.1) == pytest.approx(0.5)
        assert offline_opt_small(rounds, 1.0, ros_slack=0.05) == 0.0

    def test_round_limit(self):
        with pytest.raises(ValueError):
            offline_opt_small([AuctionSample(0.5, SecondPrice(0.4))] * 21, 1.0)

    def test_weak_duality_small(self):
        rng = np.random.default_rng(0)
        samples = [AuctionSample(float(v), SecondPrice(float(d))) for v, d in rng.random((4, 2))]
        opt = offline_opt_small(samples, 0.3)
        env = EmpiricalEnv(samples, rho=0.3)
        for lam in (0.1, 1.0, 5.0):
            for mu in (0.1, 1.0, 5.0):
                d = dual_function(env, lam, mu, n_samples=100_000)
                assert opt <= len(samples) * d.value + 3 * len(samples) * d.stderr
