"""Per-round auction primitives.

A round is described by an :class:`AuctionSample`: the bidder's value plus a
mechanism that maps a bid to an allocation and a payment.  Three mechanism
kinds are supported:

* :class:`SecondPrice` -- a single competing bid ``d``; win iff ``bid >= d``.
* :class:`Parametric` -- arbitrary allocation/payment curves.
* :class:`LandscapeDraw` -- an already realized click/cost draw from the
  semi-synthetic campaign model (the bid does not change the outcome).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np


class AuctionDomainError(ValueError):
    """Raised on invalid inputs to an auction primitive (negative bid, empty grid...)."""


@dataclass(frozen=True)
class SecondPrice:
    competing_bid: float

    def __post_init__(self):
        if self.competing_bid < 0:
            raise AuctionDomainError("competing bid must be nonnegative")

    def allocation(self, bid: float) -> float:
        # ties go to the bidder
        return 1.0 if bid >= self.competing_bid else 0.0

    def payment(self, bid: float) -> float:
        return self.competing_bid if bid >= self.competing_bid else 0.0


@dataclass(frozen=True)
class Parametric:
    """Allocation and payment given as callables of the bid."""

    allocation_fn: Callable[[float], float]
    payment_fn: Callable[[float], float]
    name: str = "parametric"

    def allocation(self, bid: float) -> float:
        return float(self.allocation_fn(bid))

    def payment(self, bid: float) -> float:
        return float(self.payment_fn(bid))


@dataclass(frozen=True)
class LinearAllocation:
    """Allocation ``min(b / scale, 1)`` priced at its truthful (Myerson) payment.

    The payment is ``b**2 / (2 * scale)`` up to ``b = scale`` and ``scale / 2``
    beyond.  With ``scale=4`` this is ``x(b) = min(b/4, 1)``,
    ``p(b) = min(b**2/8, 2)``.
    """

    scale: float = 4.0

    def __post_init__(self):
        if self.scale <= 0:
            raise AuctionDomainError("scale must be positive")

    def allocation(self, bid: float) -> float:
        return min(bid / self.scale, 1.0)

    def payment(self, bid: float) -> float:
        return min(bid * bid / (2.0 * self.scale), self.scale / 2.0)


@dataclass(frozen=True)
class LandscapeDraw:
    clicks: int
    cost_per_click: float

    def __post_init__(self):
        if self.clicks < 0 or self.cost_per_click < 0:
            raise AuctionDomainError("clicks and cost per click must be nonnegative")

    def allocation(self, bid: float) -> float:
        return float(self.clicks)

    def payment(self, bid: float) -> float:
        return self.clicks * self.cost_per_click


Mechanism = Union[SecondPrice, Parametric, LinearAllocation, LandscapeDraw]


@dataclass(frozen=True)
class AuctionSample:
    """One round's draw: value ``v_t`` and the mechanism ``(x_t, p_t)``.

    ``normalized`` marks samples whose allocation is known to lie in ``[0, 1]``;
    only then is the range checked.
    """

    value: float
    mechanism: Mechanism
    normalized: bool = True

    def __post_init__(self):
        if self.value < 0:
            raise AuctionDomainError("value must be nonnegative")

    def allocation(self, bid: float) -> float:
        return self.mechanism.allocation(bid)

    def payment(self, bid: float) -> float:
        return self.mechanism.payment(bid)


@dataclass(frozen=True)
class BidOutcome:
    bid: float
    allocation: float
    payment: float
    value_gained: float = field(default=0.0)


def evaluate(sample: AuctionSample, bid: float) -> BidOutcome:
    """Run one round of ``sample`` at ``bid``."""
    if bid < 0 or np.isnan(bid):
        raise AuctionDomainError(f"bid must be nonnegative, got {bid}")
    x = sample.allocation(bid)
    p = sample.payment(bid)
    if sample.normalized and not 0.0 <= x <= 1.0:
        raise AuctionDomainError(f"allocation {x} outside [0, 1] for a normalized sample")
    return BidOutcome(bid=bid, allocation=x, payment=p, value_gained=sample.value * x)


def check_truthfulness(sample: AuctionSample, bid_grid: Sequence[float], tolerance: float) -> bool:
    """Check monotone allocation and the Myerson payment identity on a grid.

    The integral of the allocation is taken with the trapezoid rule over the
    grid, so ``tolerance`` has to absorb the discretisation error at jumps.
    """
    grid = np.asarray(bid_grid, dtype=float)
    if grid.size == 0:
        raise AuctionDomainError("bid grid is empty")
    if tolerance <= 0:
        raise AuctionDomainError("tolerance must be positive")
    if np.any(np.diff(grid) < 0):
        raise AuctionDomainError("bid grid must be sorted ascending")
    x = np.array([sample.allocation(b) for b in grid])
    p = np.array([sample.payment(b) for b in grid])
    if np.any(np.diff(x) < -1e-12):
        return False
    area = np.concatenate(([0.0], np.cumsum(np.diff(grid) * (x[1:] + x[:-1]) / 2.0)))
    if grid[0] > 0:
        # integral from 0 to the first grid point, allocation assumed flat from 0
        area = area + grid[0] * x[0]
    p0 = sample.payment(0.0)
    myerson = p0 + grid * x - area
    return bool(np.all(np.abs(p - myerson) <= tolerance))


def satisfies_bid_cap(sample: AuctionSample, bid_grid: Sequence[float], slack: float = 1e-12) -> bool:
    """True iff ``payment(b) <= b * allocation(b)`` on every grid point."""
    return all(sample.payment(b) <= b * sample.allocation(b) + slack for b in bid_grid)
