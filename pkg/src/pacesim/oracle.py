"""Ground-truth quantities for an environment.

Expected constraint gradients as functions of the bid multiplier ``k``::

    g_B(k) = rho - E[p(k v)]            (budget)
    g_R(k) = E[v x(k v) - p(k v)]       (return on spend)

their crossing points, the dual function, the uniform-bidding upper bound on
the offline optimum, the fluid benchmark of a campaign landscape, and an exact
(up to bid grid) offline optimum for tiny explicit instances.

Monte Carlo estimates use common random numbers: every multiplier is
evaluated on the same draws, so estimated curves are smooth in ``k``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .auction import AuctionSample, SecondPrice
from .environments import CampaignLandscape, make_rng, is_single_crossing

log = logging.getLogger(__name__)

DEFAULT_SAMPLES = 1_000_000
DEFAULT_TOLERANCE = 1e-4
SCAN_POINTS = 200


class OracleError(RuntimeError):
    pass


class NoCrossingError(OracleError):
    pass


class AssumptionViolation(OracleError):
    pass


@dataclass(frozen=True)
class GradientEstimate:
    g_budget: float
    g_ros: float
    se_budget: float
    se_ros: float


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float


@dataclass(frozen=True)
class Crossings:
    k_budget: float
    k_ros: float
    se_budget: float = 0.0
    se_ros: float = 0.0

    @property
    def k_star(self) -> float:
        return min(self.k_budget, self.k_ros)

    @property
    def binding(self) -> str:
        return "budget" if self.k_budget <= self.k_ros else "ros"

    def optimal_duals(self) -> tuple[float, float]:
        """Optimal ``(lam, mu)`` of the dual problem."""
        if self.k_budget <= self.k_ros:
            return 0.0, 1.0 / self.k_budget
        return 1.0 / (self.k_ros - 1.0), 0.0


class _GradientCurves:
    """Both expected gradients of ``env`` on one fixed set of draws."""

    def __init__(self, env, n_samples, seed, rho=None):
        self.env = env
        self.rho = env.rho if rho is None else rho
        self.draws = env.mc_draws(n_samples, make_rng(seed, 101))
        self.n = n_samples

    def at(self, k):
        val, pay = self.env.mc_outcomes(self.draws, k)
        g_r = val - pay
        n = len(g_r)
        se = (lambda a: float(np.std(a, ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
        # rho - mean(p) keeps g_B(0) = rho exact
        return GradientEstimate(self.rho - float(np.mean(pay)), float(np.mean(g_r)), se(pay), se(g_r))


def expected_gradients(env, k: float, n_samples: int = DEFAULT_SAMPLES, seed: int = 0,
                       rho: Optional[float] = None) -> GradientEstimate:
    """Monte Carlo ``(g_B(k), g_R(k))`` with standard errors."""
    if k < 0:
        raise ValueError("multiplier must be nonnegative")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    return _GradientCurves(env, n_samples, seed, rho).at(k)


def _bisect(f, lo, hi, tol):
    # f(lo) > 0 >= f(hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _root_stderr(curve, k, which, h):
    est = curve.at(k)
    lo = curve.at(max(k - h, 0.0))
    hi = curve.at(k + h)
    if which == "budget":
        slope = (hi.g_budget - lo.g_budget) / (2 * h)
        se = est.se_budget
    else:
        slope = (hi.g_ros - lo.g_ros) / (2 * h)
        se = est.se_ros
    return se / abs(slope) if slope != 0 else math.inf


def crossing_points(env, rho: Optional[float] = None, tolerance: float = DEFAULT_TOLERANCE,
                    seed: int = 0, n_samples: int = DEFAULT_SAMPLES,
                    k_max: Optional[float] = None, allow_missing: bool = False) -> Crossings:
    """Roots ``k_B`` of ``g_B`` and ``k_R`` of ``g_R`` by bisection.

    The single-crossing structure is verified first with a coarse scan of
    ``SCAN_POINTS`` multipliers on ``(0, k_max]``.  A curve with no sign change
    raises :class:`NoCrossingError` unless ``allow_missing`` is set, in which
    case its crossing is reported as infinite.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    curve = _GradientCurves(env, n_samples, seed, rho)
    k_max = k_max if k_max is not None else 4.0 * max(1.0, 1.0 / curve.rho)
    grid = np.linspace(k_max / SCAN_POINTS, k_max, SCAN_POINTS)
    scan = [curve.at(k) for k in grid]
    roots = {}
    ses = {}
    for which, pick in (("budget", lambda e: e.g_budget), ("ros", lambda e: e.g_ros)):
        values = [pick(e) for e in scan]
        if not is_single_crossing(values):
            raise AssumptionViolation(f"{which} gradient crosses zero more than once on (0, {k_max}]")
        if values[-1] > 0:
            if allow_missing:
                roots[which] = math.inf
                continue
            raise NoCrossingError(f"no crossing of the {which} gradient on (0, {k_max}]")
        i = next(j for j, v in enumerate(values) if v <= 0)
        lo = grid[i - 1] if i > 0 else 0.0
        roots[which] = _bisect(lambda k: pick(curve.at(k)), lo, grid[i], tolerance)
        ses[which] = _root_stderr(curve, roots[which], which, max(grid[0], 10 * tolerance))
    ses.setdefault("budget", 0.0)
    ses.setdefault("ros", 0.0)
    if roots["ros"] <= 1.0:
        log.warning("ROS crossing %.4f is not above 1", roots["ros"])
    return Crossings(roots["budget"], roots["ros"], ses["budget"], ses["ros"])


def closed_form_crossings(env, rho: Optional[float] = None, k_max: Optional[float] = None,
                          xtol: float = 1e-12, allow_missing: bool = False) -> Crossings:
    """Crossing points from an environment's analytic gradients (``closed_form_gradients``).

    With ``allow_missing`` a curve that stays positive on the search interval
    gets an infinite crossing instead of raising.
    """
    rho = env.rho if rho is None else rho
    shift = rho - env.rho
    k_max = k_max if k_max is not None else 4.0 * max(1.0, 1.0 / rho)
    grid = np.geomspace(k_max * 1e-6, k_max, 4 * SCAN_POINTS)
    roots = {}
    for which, idx in (("budget", 0), ("ros", 1)):
        f = (lambda k, i=idx: env.closed_form_gradients(k)[i] + (shift if i == 0 else 0.0))
        values = [f(k) for k in grid]
        if not is_single_crossing(values):
            raise AssumptionViolation(f"{which} gradient crosses zero more than once on (0, {k_max}]")
        if values[-1] > 0:
            if allow_missing:
                roots[which] = math.inf
                continue
            raise NoCrossingError(f"no crossing of the {which} gradient on (0, {k_max}]")
        i = next(j for j, v in enumerate(values) if v <= 0)
        if values[i] == 0:
            roots[which] = float(grid[i])
        elif i == 0:
            raise NoCrossingError(f"{which} gradient is already nonpositive at k = {grid[0]:.3g}")
        else:
            roots[which] = float(brentq(f, grid[i - 1], grid[i], xtol=xtol))
    return Crossings(roots["budget"], roots["ros"])


def dual_function(env, lam: float, mu: float, n_samples: int = DEFAULT_SAMPLES, seed: int = 0,
                  rho: Optional[float] = None) -> Estimate:
    """Per-round dual function, evaluated at its inner maximiser ``k = (1+lam)/(lam+mu)``.

    The maximiser is exact for truthful auctions, where the per-round problem is
    a truthful auction with value ``k v``.
    """
    if lam < 0 or mu < 0:
        raise ValueError("dual variables must be nonnegative")
    if lam + mu == 0:
        raise OracleError("dual function is unbounded at lam = mu = 0")
    rho = env.rho if rho is None else rho
    k = (1.0 + lam) / (lam + mu)
    draws = env.mc_draws(n_samples, make_rng(seed, 202))
    val, pay = env.mc_outcomes(draws, k)
    terms = (1.0 + lam) * val - (lam + mu) * pay + rho * mu
    se = float(np.std(terms, ddof=1) / math.sqrt(len(terms))) if len(terms) > 1 else 0.0
    return Estimate(float(np.mean(terms)), se)


def optimal_value_per_round(env, crossings: Optional[Crossings] = None,
                            n_samples: int = DEFAULT_SAMPLES, seed: int = 0) -> Estimate:
    """``E[v x(k* v)]``: per-round upper bound on the expected offline optimum."""
    crossings = crossings or crossing_points(env, seed=seed, n_samples=n_samples)
    draws = env.mc_draws(n_samples, make_rng(seed, 303))
    val, _ = env.mc_outcomes(draws, crossings.k_star)
    se = float(np.std(val, ddof=1) / math.sqrt(len(val))) if len(val) > 1 else 0.0
    return Estimate(float(np.mean(val)), se)


def assumption_diagnostics(env, crossings: Crossings, n_samples: int = 100_000, seed: int = 0,
                           h: float = 1e-2) -> dict:
    """Second moment of the gradients at ``k*`` and the local slope of the binding gradient."""
    curve = _GradientCurves(env, n_samples, seed)
    k = crossings.k_star
    val, pay = env.mc_outcomes(curve.draws, k)
    g_b = curve.rho - pay
    g_r = val - pay
    lo, hi = curve.at(max(k - h, 0.0)), curve.at(k + h)
    if crossings.binding == "budget":
        slope = (hi.g_budget - lo.g_budget) / (2 * h)
    else:
        slope = (hi.g_ros - lo.g_ros) / (2 * h)
    return {
        "second_moment_budget": float(np.mean(g_b**2)),
        "second_moment_ros": float(np.mean(g_r**2)),
        "binding_slope": float(slope),
    }


# --------------------------------------------------------------------------
# fluid benchmark of a campaign landscape


@dataclass(frozen=True)
class Benchmark:
    k_star: float
    conv_star: float
    spend_star: float
    binding: Optional[str]  # "budget", "ros" or None when nothing binds


def fluid_benchmark(campaign: Optional[CampaignLandscape] = None, *,
                    conv: Optional[Callable[[float], float]] = None,
                    spend: Optional[Callable[[float], float]] = None,
                    rho: Optional[float] = None, k_max: Optional[float] = None,
                    tol: float = 1e-7) -> Benchmark:
    """Largest multiplier whose expected spend fits the budget and the ROS target.

    Either pass a :class:`CampaignLandscape` or the per-period curves
    ``conv(k)``, ``spend(k)`` with ``rho`` and a search bound ``k_max``.
    """
    if campaign is not None:
        conv, spend, rho = campaign.conv, campaign.spend, campaign.rho
        k_max = float(campaign.knots[-1, 0]) if k_max is None else k_max
    if conv is None or spend is None or rho is None or k_max is None:
        raise ValueError("need a campaign or conv, spend, rho and k_max")
    eps = 1e-12

    def feasible(k):
        s = float(spend(k))
        return s <= rho + eps and float(conv(k)) >= s - eps

    if feasible(k_max):
        return Benchmark(k_max, float(conv(k_max)), float(spend(k_max)), None)
    lo, hi = 0.0, k_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    binding = "budget" if float(spend(hi)) > rho + eps else "ros"
    return Benchmark(lo, float(conv(lo)), float(spend(lo)), binding)


# --------------------------------------------------------------------------
# offline optimum of a tiny explicit instance


def _round_options(sample: AuctionSample, resolution: float, bid_max: float) -> np.ndarray:
    bids = list(np.arange(0.0, bid_max + resolution / 2, resolution))
    if isinstance(sample.mechanism, SecondPrice):
        bids.append(sample.mechanism.competing_bid)
    pts = np.array([(sample.payment(b), sample.value * sample.allocation(b)) for b in bids])
    return _pareto(pts)


def _pareto(pts: np.ndarray) -> np.ndarray:
    """Points not dominated in (lower spend, higher value)."""
    order = np.lexsort((-pts[:, 1], pts[:, 0]))
    pts = pts[order]
    best = np.maximum.accumulate(pts[:, 1])
    keep = np.concatenate(([True], pts[1:, 1] > best[:-1]))
    return pts[keep]


def offline_opt_small(samples: Sequence[AuctionSample], rho: float, resolution: float = 0.01,
                      bid_max: Optional[float] = None, max_rounds: int = 20,
                      ros_slack: float = 0.0) -> float:
    """Best total value over per-round bids on a grid, under both constraints.

    The search keeps, round by round, the Pareto frontier of reachable
    (cumulative spend, cumulative value) pairs, so it is exact on the grid.
    Competing bids of second-price rounds are added to the grid.  Partial
    plans whose ROS deficit exceeds the largest surplus the remaining rounds
    can still earn are dropped.  ``ros_slack`` relaxes the ROS constraint to
    ``spend <= value + ros_slack``.
    """
    T = len(samples)
    if T == 0 or T > max_rounds:
        raise ValueError(f"offline optimum needs 1..{max_rounds} rounds, got {T}")
    budget = rho * T
    if bid_max is None:
        bid_max = 4.0 * max(1.0, max(s.value for s in samples))
    options = [_round_options(s, resolution, bid_max) for s in samples]
    surplus = [max(0.0, float(np.max(o[:, 1] - o[:, 0]))) for o in options]
    # largest surplus still available after each round
    future = np.concatenate((np.cumsum(surplus[::-1])[::-1][1:], [0.0])) + ros_slack
    frontier = np.zeros((1, 2))
    for t, opts in enumerate(options):
        sums = (frontier[:, None, :] + opts[None, :, :]).reshape(-1, 2)
        keep = (sums[:, 0] <= budget + 1e-12) & (sums[:, 0] - sums[:, 1] <= future[t] + 1e-12)
        frontier = _pareto(sums[keep])
    best = float(frontier[:, 1].max())
    if best == 0.0 and len(frontier) > 1:
        log.warning("only the all-zero plan is feasible on this grid")
    return best
