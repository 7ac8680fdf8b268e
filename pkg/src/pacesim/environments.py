"""Generators of per-round auction streams.

Every environment exposes three views of the same distribution:

``sample(rng)``
    one :class:`~pacesim.auction.AuctionSample`;
``stream(T, rng)``
    a whole episode in array form (:class:`Stream`), consumed by the kernel;
``outcomes(k, n, rng)``
    value gained and payment of ``n`` i.i.d. rounds bid at multiplier ``k``
    (the Monte Carlo view used by the oracle).

Randomness always comes from an explicit :class:`numpy.random.Generator`; use
:func:`make_rng` to derive reproducible, independent streams from a master seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import poisson

from . import kernels
from .auction import (
    AuctionDomainError,
    AuctionSample,
    BidOutcome,
    LandscapeDraw,
    LinearAllocation,
    SecondPrice,
)


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


def truncated_normal(rng: np.random.Generator, n: int, mean: float = 1.0, sd: float = 0.1,
                     low: float = 0.0, high: float = 2.0) -> np.ndarray:
    """Gaussian truncated to ``[low, high]`` by inverse-CDF sampling."""
    a = ndtr((low - mean) / sd)
    b = ndtr((high - mean) / sd)
    u = rng.random(n)
    z = mean + sd * ndtri(a + u * (b - a))
    return np.clip(z, low, high)


@dataclass(frozen=True)
class Stream:
    """One episode's rounds in array form.

    ``kind`` selects the mechanism: second price (``a`` holds competing bids),
    linear allocation (``a`` holds the scale) or landscape (``a`` holds the
    Poisson uniforms and ``b`` the cost noise).
    """

    kind: int
    values: np.ndarray
    a: np.ndarray
    b: np.ndarray
    knots: Optional[np.ndarray] = None
    periods: float = 1.0
    # value, allocation and payment all within [0, 1]
    bounded: bool = True
    # payments never exceed bid * allocation
    bid_capped: bool = True
    name: str = ""

    def __len__(self):
        return len(self.values)

    def kernel_args(self):
        knots = self.knots if self.knots is not None else np.zeros((2, 3))
        return (
            np.ascontiguousarray(self.values, dtype=float),
            np.ascontiguousarray(self.a, dtype=float),
            np.ascontiguousarray(self.b, dtype=float),
            np.ascontiguousarray(knots[:, 0], dtype=float),
            np.ascontiguousarray(knots[:, 1], dtype=float),
            np.ascontiguousarray(knots[:, 2], dtype=float),
            float(self.periods),
        )

    def samples(self) -> list[AuctionSample]:
        """The same rounds as :class:`AuctionSample` objects."""
        out = []
        for t in range(len(self)):
            v = float(self.values[t])
            if self.kind == kernels.SECOND_PRICE:
                mech = SecondPrice(float(self.a[t]))
            elif self.kind == kernels.LINEAR_ALLOCATION:
                mech = LinearAllocation(float(self.a[t]))
            else:
                mech = LandscapeRound(self.knots, self.periods, v, float(self.a[t]), float(self.b[t]))
            out.append(AuctionSample(v, mech, normalized=self.kind == kernels.SECOND_PRICE))
        return out


def stream_from_samples(samples: Sequence[AuctionSample]) -> Optional[Stream]:
    """Pack a homogeneous list of samples into a :class:`Stream`, or None if unsupported."""
    if not samples:
        return None
    mechs = [s.mechanism for s in samples]
    values = np.array([s.value for s in samples], dtype=float)
    zeros = np.zeros(len(samples))
    bounded = all(s.value <= 1.0 for s in samples)
    if all(isinstance(m, SecondPrice) for m in mechs):
        a = np.array([m.competing_bid for m in mechs])
        return Stream(kernels.SECOND_PRICE, values, a, zeros, bounded=bounded)
    if all(isinstance(m, LinearAllocation) for m in mechs):
        a = np.array([m.scale for m in mechs])
        return Stream(kernels.LINEAR_ALLOCATION, values, a, zeros, bounded=bounded)
    if all(isinstance(m, LandscapeRound) for m in mechs):
        first = mechs[0]
        if all(m.knots is first.knots and m.periods == first.periods for m in mechs):
            return Stream(kernels.LANDSCAPE, values, np.array([m.uniform for m in mechs]),
                          np.array([m.noise for m in mechs]), knots=first.knots,
                          periods=first.periods, bounded=False, bid_capped=False)
    return None


# --------------------------------------------------------------------------
# exponential values and competing bids


@dataclass(frozen=True)
class ExponentialSecondPriceEnv:
    """Second-price rounds with independent exponential value and competing bid."""

    value_mean: float = 0.5
    competing_bid_mean: float = 1.0
    rho: float = 9.0 / 16.0
    name: str = "exponential"

    def __post_init__(self):
        if self.value_mean <= 0 or self.competing_bid_mean <= 0 or self.rho <= 0:
            raise AuctionDomainError("means and rho must be positive")

    def _draw(self, rng, n):
        u = rng.random((2, n))
        v = -self.value_mean * np.log1p(-u[0])
        d = -self.competing_bid_mean * np.log1p(-u[1])
        return v, d

    def sample(self, rng: np.random.Generator) -> AuctionSample:
        v, d = self._draw(rng, 1)
        return AuctionSample(float(v[0]), SecondPrice(float(d[0])), normalized=True)

    def stream(self, T: int, rng: np.random.Generator) -> Stream:
        v, d = self._draw(rng, T)
        return Stream(kernels.SECOND_PRICE, v, d, np.zeros(T), bounded=False, name=self.name)

    def mc_draws(self, n: int, rng: np.random.Generator):
        return self._draw(rng, n)

    def mc_outcomes(self, draws, k: float):
        v, d = draws
        win = k * v >= d
        return np.where(win, v, 0.0), np.where(win, d, 0.0)

    def outcomes(self, k: float, n: int, rng: np.random.Generator):
        return self.mc_outcomes(self.mc_draws(n, rng), k)

    def closed_form_gradients(self, k: float) -> tuple[float, float]:
        """Exact ``(g_B(k), g_R(k))`` for exponential value and competing bid."""
        a = 1.0 / self.value_mean
        c = 1.0 / self.competing_bid_mean
        s = a + c * k
        # E[v 1{d <= k v}] and E[d 1{d <= k v}]
        value = 1.0 / a - a / s**2
        pay = (1.0 / c) * (1.0 - a / s) - a * k / s**2
        return self.rho - pay, value - pay


@dataclass(frozen=True)
class UniformSecondPriceEnv:
    """Second-price rounds with value and competing bid uniform on ``[0, 1]``.

    Fully normalized, so every quantity lies in ``[0, 1]``.
    """

    rho: float = 0.1
    name: str = "uniform"

    def _draw(self, rng, n):
        u = rng.random((2, n))
        return u[0], u[1]

    def sample(self, rng: np.random.Generator) -> AuctionSample:
        v, d = self._draw(rng, 1)
        return AuctionSample(float(v[0]), SecondPrice(float(d[0])))

    def stream(self, T: int, rng: np.random.Generator) -> Stream:
        v, d = self._draw(rng, T)
        return Stream(kernels.SECOND_PRICE, v, d, np.zeros(T), bounded=True, name=self.name)

    def mc_draws(self, n: int, rng: np.random.Generator):
        return self._draw(rng, n)

    def mc_outcomes(self, draws, k: float):
        v, d = draws
        win = k * v >= d
        return np.where(win, v, 0.0), np.where(win, d, 0.0)

    def outcomes(self, k: float, n: int, rng: np.random.Generator):
        return self.mc_outcomes(self.mc_draws(n, rng), k)

    def closed_form_gradients(self, k: float) -> tuple[float, float]:
        # P(d <= kv) with v, d ~ U[0,1]
        if k <= 1.0:
            value = k / 3.0
            pay = k * k / 6.0
        else:
            value = 0.5 - 1.0 / (6.0 * k * k)
            pay = 0.5 - 1.0 / (3.0 * k)
        return self.rho - pay, value - pay


@dataclass(frozen=True)
class EmpiricalEnv:
    """Uniform distribution over a fixed, finite list of samples."""

    samples: tuple
    rho: float
    name: str = "empirical"

    def __post_init__(self):
        if not self.samples:
            raise AuctionDomainError("empirical environment needs at least one sample")
        object.__setattr__(self, "samples", tuple(self.samples))

    def sample(self, rng: np.random.Generator) -> AuctionSample:
        return self.samples[int(rng.integers(len(self.samples)))]

    def mc_draws(self, n: int, rng: np.random.Generator):
        return rng.integers(len(self.samples), size=n)

    def mc_outcomes(self, idx, k: float):
        vals = np.array([s.value * s.allocation(k * s.value) for s in self.samples])
        pays = np.array([s.payment(k * s.value) for s in self.samples])
        return vals[idx], pays[idx]

    def outcomes(self, k: float, n: int, rng: np.random.Generator):
        return self.mc_outcomes(self.mc_draws(n, rng), k)


# --------------------------------------------------------------------------
# deterministic instances on which sequential pacing fails


@dataclass(frozen=True)
class AdversarialInstance:
    """Point-mass instance: ``v = 1``, ``x(b) = min(b/4, 1)``, ``p(b) = min(b^2/8, 2)``.

    ``variant="ros"`` uses per-round budget 1.9 (the ROS constraint binds at
    ``k = 2``); ``variant="budget"`` uses ``1 / (200 mu0^4)`` (the budget binds
    at ``k = 1 / (5 mu0^2)``).
    """

    variant: str = "ros"
    mu0: float = 1.0

    def __post_init__(self):
        if self.variant not in ("ros", "budget"):
            raise AuctionDomainError(f"unknown adversarial variant {self.variant!r}")
        if self.mu0 <= 0:
            raise AuctionDomainError("mu0 must be positive")

    @property
    def name(self) -> str:
        return "adversarial-ros" if self.variant == "ros" else "adversarial-budget"

    @property
    def rho(self) -> float:
        if self.variant == "ros":
            return 1.9
        return 1.0 / (200.0 * self.mu0**4)

    def sample(self, rng: Optional[np.random.Generator] = None) -> AuctionSample:
        return AuctionSample(1.0, LinearAllocation(4.0), normalized=False)

    def stream(self, T: int, rng: Optional[np.random.Generator] = None) -> Stream:
        return Stream(kernels.LINEAR_ALLOCATION, np.ones(T), np.full(T, 4.0), np.zeros(T),
                      bounded=False, name=self.name)

    def mc_draws(self, n: int, rng: Optional[np.random.Generator] = None):
        return n

    def mc_outcomes(self, n, k: float):
        x = min(k / 4.0, 1.0)
        p = min(k * k / 8.0, 2.0)
        return np.full(n, x), np.full(n, p)

    def outcomes(self, k: float, n: int, rng: Optional[np.random.Generator] = None):
        return self.mc_outcomes(n, k)

    def closed_form_gradients(self, k: float) -> tuple[float, float]:
        x = min(k / 4.0, 1.0)
        p = min(k * k / 8.0, 2.0)
        return self.rho - p, x - p


# --------------------------------------------------------------------------
# semi-synthetic campaigns


@dataclass(frozen=True)
class LandscapeRound:
    """A semi-synthetic round with its randomness fixed in advance.

    Clicks are the Poisson inverse CDF at ``uniform`` with mean
    ``clicks(bid / value) / periods``; cost per click is ``cost/clicks`` at the
    same multiplier, times ``noise``.  For a fixed draw this is a
    deterministic, nondecreasing function of the bid.
    """

    knots: np.ndarray = field(repr=False)
    periods: float
    value: float
    uniform: float
    noise: float

    def _multiplier(self, bid):
        return bid / self.value if self.value > 0 else 0.0

    def allocation(self, bid: float) -> float:
        day_clicks = np.interp(self._multiplier(bid), self.knots[:, 0], self.knots[:, 1])
        if day_clicks <= 0:
            return 0.0
        return float(kernels.poisson_inv(self.uniform, day_clicks / self.periods))

    def payment(self, bid: float) -> float:
        k = self._multiplier(bid)
        day_clicks = np.interp(k, self.knots[:, 0], self.knots[:, 1])
        if day_clicks <= 0:
            return 0.0
        cpc = np.interp(k, self.knots[:, 0], self.knots[:, 2]) / day_clicks
        x = float(kernels.poisson_inv(self.uniform, day_clicks / self.periods))
        return x * cpc * self.noise


@dataclass(frozen=True)
class CampaignLandscape:
    """Aggregated daily bidding landscape of one campaign.

    ``knots`` rows are ``(multiplier, clicks_per_day, cost_per_day)``; the
    curves are linearly interpolated between knots and held flat beyond the
    last one.  ``T`` is the number of pacing periods per day.
    """

    knots: np.ndarray
    tcpa: float
    pconv_mean: float
    T: int
    budget: float

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 2 or knots.shape[1] != 3 or len(knots) < 2:
            raise AuctionDomainError("knots must be an (n >= 2, 3) array")
        if np.any(np.diff(knots[:, 0]) <= 0):
            raise AuctionDomainError("knot multipliers must be strictly increasing")
        if np.any(np.diff(knots[:, 1]) < 0) or np.any(np.diff(knots[:, 2]) < 0):
            raise AuctionDomainError("clicks and cost must be nondecreasing in the multiplier")
        if knots[0, 0] != 0 or knots[0, 1] != 0 or knots[0, 2] != 0:
            raise AuctionDomainError("landscape must start at the origin")
        if self.tcpa <= 0 or not 0 < self.pconv_mean <= 1 or self.T < 1 or self.budget <= 0:
            raise AuctionDomainError("invalid campaign parameters")
        object.__setattr__(self, "knots", knots)

    @property
    def rho(self) -> float:
        return self.budget / self.T

    @property
    def mean_value(self) -> float:
        return self.tcpa * self.pconv_mean

    def clicks(self, k):
        return np.interp(k, self.knots[:, 0], self.knots[:, 1])

    def cost(self, k):
        return np.interp(k, self.knots[:, 0], self.knots[:, 2])

    def cpc(self, k):
        clicks = self.clicks(k)
        return np.divide(self.cost(k), clicks, out=np.zeros_like(np.asarray(clicks, dtype=float)),
                         where=np.asarray(clicks) > 0)

    def conv(self, k):
        """Expected value per period at multiplier ``k`` (certainty equivalent)."""
        return self.mean_value * self.clicks(k) / self.T

    def spend(self, k):
        """Expected spend per period at multiplier ``k``."""
        return self.cost(k) / self.T

    def expected_sample(self) -> AuctionSample:
        """Per-period expected allocation and payment curves at the mean value."""
        from .auction import Parametric

        v = self.mean_value
        return AuctionSample(
            v,
            Parametric(lambda b: float(self.clicks(b / v)) / self.T,
                       lambda b: float(self.cost(b / v)) / self.T, name="campaign-expected"),
            normalized=False,
        )

    def to_json(self) -> str:
        return json.dumps({
            "tcpa": self.tcpa,
            "pconv_mean": self.pconv_mean,
            "T": self.T,
            "budget": self.budget,
            "knots": self.knots.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "CampaignLandscape":
        data = json.loads(text)
        extra = set(data) - {"tcpa", "pconv_mean", "T", "budget", "knots"}
        if extra:
            raise AuctionDomainError(f"unknown campaign fields: {sorted(extra)}")
        return cls(np.array(data["knots"], dtype=float), float(data["tcpa"]),
                   float(data["pconv_mean"]), int(data["T"]), float(data["budget"]))


@dataclass(frozen=True)
class SemiSyntheticEnv:
    """Generative model of a campaign: Poisson clicks, noisy cost, noisy conversion rate."""

    campaign: CampaignLandscape
    noise_sd: float = 0.1
    pconv_sd: float = 0.1
    name: str = "campaign"

    @property
    def rho(self) -> float:
        return self.campaign.rho

    def _draw(self, rng, n):
        z = truncated_normal(rng, n, 1.0, self.pconv_sd, 0.0, 2.0)
        u = rng.random(n)
        noise = truncated_normal(rng, n, 1.0, self.noise_sd, 0.0, 2.0)
        return self.campaign.mean_value * z, u, noise

    def sample(self, rng: np.random.Generator) -> AuctionSample:
        v, u, noise = self._draw(rng, 1)
        c = self.campaign
        return AuctionSample(float(v[0]), LandscapeRound(c.knots, float(c.T), float(v[0]),
                                                         float(u[0]), float(noise[0])),
                             normalized=False)

    def stream(self, T: int, rng: np.random.Generator) -> Stream:
        v, u, noise = self._draw(rng, T)
        return Stream(kernels.LANDSCAPE, v, u, noise, knots=self.campaign.knots,
                      periods=float(self.campaign.T), bounded=False, bid_capped=False,
                      name=self.name)

    def mc_draws(self, n: int, rng: np.random.Generator):
        return self._draw(rng, n)

    def mc_outcomes(self, draws, k: float):
        v, u, noise = draws
        c = self.campaign
        mean = float(c.clicks(k)) / c.T
        if mean <= 0:
            zeros = np.zeros_like(v)
            return zeros, zeros
        clicks = poisson.ppf(u, mean)
        return v * clicks, clicks * float(c.cpc(k)) * noise

    def outcomes(self, k: float, n: int, rng: np.random.Generator):
        return self.mc_outcomes(self.mc_draws(n, rng), k)

    def closed_form_gradients(self, k: float) -> tuple[float, float]:
        c = self.campaign
        return c.rho - float(c.spend(k)), float(c.conv(k) - c.spend(k))


def sample_semi_synthetic(campaign: CampaignLandscape, k: float, rng: np.random.Generator,
                          noise_sd: float = 0.1, bounds: tuple[float, float] = (0.0, 2.0)) -> BidOutcome:
    """One realized period of ``campaign`` at multiplier ``k``."""
    if k < 0:
        raise AuctionDomainError("multiplier must be nonnegative")
    low, high = bounds
    z = truncated_normal(rng, 1, 1.0, noise_sd, low, high)[0]
    v = campaign.mean_value * z
    clicks = int(rng.poisson(float(campaign.clicks(k)) / campaign.T))
    noise = truncated_normal(rng, 1, 1.0, noise_sd, low, high)[0]
    draw = LandscapeDraw(clicks, float(campaign.cpc(k)) * noise)
    return BidOutcome(bid=k * v, allocation=float(clicks), payment=draw.payment(k * v),
                      value_gained=v * clicks)


def landscape_ros_crossing(knots: np.ndarray, mean_value: float) -> Optional[float]:
    """Multiplier where expected conversion value equals expected cost, or None."""
    k, clicks, cost = knots[:, 0], knots[:, 1], knots[:, 2]
    slack = mean_value * clicks - cost
    idx = np.nonzero((slack[1:] < 0) & (slack[:-1] >= 0))[0]
    if idx.size == 0:
        return None
    i = idx[-1]
    w = slack[i] / (slack[i] - slack[i + 1])
    return float(k[i] + w * (k[i + 1] - k[i]))


def generate_synthetic_campaign(rng: np.random.Generator, n_knots: int = 24, periods: int = 144,
                                budget_factor: tuple[float, float] = (0.5, 1.5)) -> CampaignLandscape:
    """Draw a campaign with monotone, truthfully priced landscape curves.

    Daily clicks follow a Hill curve ``C k^h / (k^h + s^h)``.  Daily cost is
    the truthful price of that click curve at the mean value, which makes the
    (spend, conversion value) frontier concave with slope ``1/k``.  The budget
    is a random multiple of the cost at the ROS crossing, so campaigns with a
    factor below one are budget-bound and the rest ROS-bound.
    """
    if n_knots < 2:
        raise AuctionDomainError("need at least two knots")
    max_clicks = periods * rng.uniform(0.3, 1.5)
    hill = rng.uniform(1.5, 3.0)
    half = rng.uniform(0.8, 2.0)
    mean_value = rng.uniform(0.5, 2.0)
    pconv = rng.uniform(0.02, 0.2)
    factor = rng.uniform(*budget_factor)
    k_max = 6.0 * half
    while True:
        k = np.linspace(0.0, k_max, n_knots)
        clicks = max_clicks * k**hill / (k**hill + half**hill)
        # truthful cost at knots for piecewise-linear clicks
        dcost = mean_value * np.diff(clicks) * (k[1:] + k[:-1]) / 2.0
        cost = np.concatenate(([0.0], np.cumsum(dcost)))
        knots = np.column_stack([k, clicks, cost])
        k_ros = landscape_ros_crossing(knots, mean_value)
        if k_ros is not None and k_ros < 0.8 * k_max:
            break
        k_max *= 1.5
    budget = factor * float(np.interp(k_ros, k, cost))
    return CampaignLandscape(knots, tcpa=mean_value / pconv, pconv_mean=pconv, T=periods, budget=budget)


def campaign_fleet(n: int, seed: int, **kwargs) -> list[CampaignLandscape]:
    return [generate_synthetic_campaign(make_rng(seed, 7, i), **kwargs) for i in range(n)]


ENV_NAMES = ("adversarial-ros", "adversarial-budget", "exponential", "uniform", "campaign")


def make_env(name: str, **params):
    """Environment by CLI name."""
    if name == "adversarial-ros":
        return AdversarialInstance("ros")
    if name == "adversarial-budget":
        return AdversarialInstance("budget", mu0=params.get("mu0", 1.0))
    if name == "exponential":
        kw = {k: params[k] for k in ("value_mean", "competing_bid_mean", "rho") if k in params}
        return ExponentialSecondPriceEnv(**kw)
    if name == "uniform":
        return UniformSecondPriceEnv(**({"rho": params["rho"]} if "rho" in params else {}))
    if name == "campaign":
        if "campaign_file" in params:
            with open(params["campaign_file"]) as fh:
                campaign = CampaignLandscape.from_json(fh.read())
        else:
            campaign = generate_synthetic_campaign(make_rng(params.get("campaign_seed", 0), 7, 0))
        return SemiSyntheticEnv(campaign)
    raise AuctionDomainError(f"unknown environment {name!r}; expected one of {ENV_NAMES}")


def is_single_crossing(values: Sequence[float]) -> bool:
    """True when the sequence changes sign at most once, from positive to negative."""
    signs = [math.copysign(1, v) for v in values if v != 0]
    changes = sum(1 for a, b in zip(signs, signs[1:]) if a != b)
    return changes == 0 or (changes == 1 and signs[0] > 0)
