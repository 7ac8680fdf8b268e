"""Budget/ROS pacing algorithms.

All three pacers keep two multiplicative dual variables: ``lam`` for the
return-on-spend constraint and ``mu`` for the budget.  They differ only in how
the bid multiplier is built from them:

==============  =====================================
dual-optimal    ``(1 + lam) / (mu + lam)``
sequential      ``(1 + lam) / lam * 1 / mu``
min             ``min((1 + lam) / lam, 1 / mu)``
==============  =====================================

The bid is ``multiplier * value`` capped by the remaining budget.  After the
auction both duals move against the realized constraint gradients::

    lam <- lam * exp(-alpha * (value * x - p))
    mu  <- mu  * exp(-eta * (rho - p))
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from .auction import AuctionSample, BidOutcome, evaluate
from .environments import Stream, stream_from_samples


class PacingStateError(ValueError):
    """Dual variables outside the domain of the bid formula."""


class InvariantViolation(AssertionError):
    """A guaranteed property of an episode failed."""


class PacerKind(enum.Enum):
    DUAL_OPTIMAL = "dual-optimal"
    SEQUENTIAL = "sequential"
    MIN = "min"

    @property
    def code(self) -> int:
        return {PacerKind.DUAL_OPTIMAL: kernels.DUAL_OPTIMAL,
                PacerKind.SEQUENTIAL: kernels.SEQUENTIAL,
                PacerKind.MIN: kernels.MIN}[self]

    @classmethod
    def parse(cls, name: Union[str, "PacerKind"]) -> "PacerKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(name)
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown pacer kind {name!r}; expected one of {{{choices}}}") from None


@dataclass(frozen=True)
class DualState:
    lam: float
    mu: float
    budget: float
    rho: float
    alpha: float
    eta: float
    spent: float = 0.0
    round: int = 0
    stopped: bool = False

    @property
    def remaining_budget(self) -> float:
        return self.budget - self.spent


@dataclass(frozen=True)
class PacerConfig:
    """Episode parameters.  ``None`` step sizes mean ``1/sqrt(T)``; ``None``
    ``mu_init`` means ``rho``; ``None`` budget means ``rho * T``."""

    rho: float
    alpha: Optional[float] = None
    eta: Optional[float] = None
    lambda_init: float = 1.0
    mu_init: Optional[float] = None
    budget: Optional[float] = None

    def resolve(self, T: int) -> "PacerConfig":
        if T < 1:
            raise ValueError("horizon must be at least one round")
        cfg = replace(
            self,
            alpha=self.alpha if self.alpha is not None else 1.0 / math.sqrt(T),
            eta=self.eta if self.eta is not None else 1.0 / math.sqrt(T),
            mu_init=self.mu_init if self.mu_init is not None else self.rho,
            budget=self.budget if self.budget is not None else self.rho * T,
        )
        if cfg.rho <= 0:
            raise ValueError("rho must be positive")
        if cfg.alpha < 0 or cfg.eta < 0:
            raise ValueError("step sizes must be nonnegative")
        if cfg.lambda_init <= 0 or cfg.mu_init <= 0:
            raise ValueError("initial duals must be positive")
        if cfg.budget <= 0:
            raise ValueError("budget must be positive")
        return cfg

    def initial_state(self, T: int) -> DualState:
        cfg = self.resolve(T)
        return DualState(cfg.lambda_init, cfg.mu_init, cfg.budget, cfg.rho, cfg.alpha, cfg.eta)


def bid_multiplier(kind: PacerKind, lam: float, mu: float) -> float:
    if kind is PacerKind.DUAL_OPTIMAL:
        if lam < 0 or mu < 0 or lam + mu <= 0:
            raise PacingStateError("dual-optimal needs lam, mu >= 0 and lam + mu > 0")
        return (1.0 + lam) / (mu + lam)
    if lam <= 0 or mu <= 0:
        raise PacingStateError(f"{kind.value} pacing needs lam > 0 and mu > 0")
    if kind is PacerKind.SEQUENTIAL:
        return (1.0 + lam) / lam / mu
    ros = (1.0 + lam) / lam
    bud = 1.0 / mu
    return ros if ros < bud else bud


def compute_bid(kind: PacerKind, state: DualState, value: float) -> float:
    if state.stopped:
        raise PacingStateError("pacer already stopped")
    if value < 0:
        raise ValueError("value must be nonnegative")
    bid = bid_multiplier(kind, state.lam, state.mu) * value
    remaining = state.remaining_budget
    return bid if bid <= remaining else remaining


def update_duals(state: DualState, outcome: BidOutcome, value: float) -> DualState:
    """Apply one round of feedback; ``outcome`` must come from ``state``'s bid."""
    p = outcome.payment
    val = value * outcome.allocation
    spent = state.spent + p
    return replace(
        state,
        lam=state.lam * math.exp(-state.alpha * (val - p)),
        mu=state.mu * math.exp(-state.eta * (state.rho - p)),
        spent=spent,
        round=state.round + 1,
        stopped=state.stopped or spent >= state.budget,
    )


def step(kind: PacerKind, state: DualState, sample: AuctionSample) -> tuple[DualState, BidOutcome, float]:
    """Play one round.  Returns the new state, the (possibly voided) outcome and the multiplier."""
    if state.stopped:
        zero = BidOutcome(0.0, 0.0, 0.0, 0.0)
        return replace(state, round=state.round + 1), zero, 0.0
    k = bid_multiplier(kind, state.lam, state.mu)
    bid = compute_bid(kind, state, sample.value)
    outcome = evaluate(sample, bid)
    voided = state.spent + outcome.payment > state.budget
    if voided:
        outcome = BidOutcome(bid, 0.0, 0.0, 0.0)
    new = update_duals(state, outcome, sample.value)
    if voided:
        new = replace(new, stopped=True)
    return new, outcome, k


@dataclass(frozen=True)
class Trajectory:
    """Per-round record of one episode.

    ``lam[t]`` and ``mu[t]`` are the duals used to bid in round ``t``;
    ``spent[t]`` is the cumulative payment after round ``t``.
    """

    kind: PacerKind
    config: PacerConfig
    multiplier: np.ndarray
    bid: np.ndarray
    allocation: np.ndarray
    payment: np.ndarray
    value_gained: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    spent: np.ndarray
    stop_round: int = -1

    @property
    def T(self) -> int:
        return len(self.bid)

    @property
    def budget(self) -> float:
        return self.config.budget

    @property
    def remaining_budget(self) -> np.ndarray:
        return self.config.budget - self.spent

    @property
    def stopping_time(self) -> int:
        """First round (1-based) with cumulative payment + 1 >= budget; ``T`` if never."""
        hit = np.nonzero(self.spent + 1.0 >= self.config.budget)[0]
        return int(hit[0]) + 1 if hit.size else self.T

    @property
    def total_spend(self) -> float:
        return float(self.spent[-1])

    @property
    def reward(self) -> float:
        return float(np.sum(self.value_gained))

    @property
    def ros_violation(self) -> float:
        return float(np.sum(self.payment) - self.reward)


def _empty_outputs(T):
    return [np.zeros(T) for _ in range(8)]


def run_episode(kind: Union[PacerKind, str], stream: Union[Stream, Sequence[AuctionSample]],
                config: PacerConfig, *, backend: Optional[str] = None,
                check_invariants: bool = False) -> Trajectory:
    """Run one pacer over a whole stream.

    ``backend`` is ``"cython"``, ``"python"`` (the two kernels) or ``"reference"``
    (round by round through :func:`step`); the default is the fastest available.
    Sample lists that cannot be packed into a :class:`Stream` always take the
    reference path.
    """
    kind = PacerKind.parse(kind)
    T = len(stream)
    if T == 0:
        raise ValueError("empty stream")
    cfg = config.resolve(T)
    bid_multiplier(kind, cfg.lambda_init, cfg.mu_init)
    if not isinstance(stream, Stream):
        packed = stream_from_samples(stream)
        if packed is None:
            backend = "reference"
            samples = list(stream)
        else:
            samples, stream = list(stream), packed
    if backend == "reference":
        if isinstance(stream, Stream):
            samples = stream.samples()
        traj = _run_reference(kind, samples, cfg)
    else:
        out = _empty_outputs(T)
        stop = kernels.run_rounds(kind.code, stream.kind, *stream.kernel_args(), cfg.rho, cfg.budget,
                                  cfg.alpha, cfg.eta, cfg.lambda_init, cfg.mu_init, *out,
                                  backend=backend)
        traj = Trajectory(kind, cfg, *out, stop_round=int(stop))
    if check_invariants:
        bounded = stream.bounded if isinstance(stream, Stream) else False
        bid_capped = stream.bid_capped if isinstance(stream, Stream) else False
        check_trajectory(traj, bounded=bounded, bid_capped=bid_capped)
    return traj


def _run_reference(kind, samples, cfg):
    T = len(samples)
    out = _empty_outputs(T)
    state = DualState(cfg.lambda_init, cfg.mu_init, cfg.budget, cfg.rho, cfg.alpha, cfg.eta)
    stop = -1
    for t, sample in enumerate(samples):
        out[5][t] = state.lam
        out[6][t] = state.mu
        was_stopped = state.stopped
        state, outcome, k = step(kind, state, sample)
        out[0][t] = k
        out[1][t] = outcome.bid
        out[2][t] = outcome.allocation
        out[3][t] = outcome.payment
        out[4][t] = outcome.value_gained
        out[7][t] = state.spent
        if not was_stopped and state.stopped and stop < 0:
            stop = t
    return Trajectory(kind, cfg, *out, stop_round=stop)


def ros_violation_bound(T: int, lambda_init: float) -> float:
    """Ex-post ROS violation bound for min pacing with ``alpha = 1/sqrt(T)``."""
    return 2.0 * math.sqrt(T) * math.log(T / lambda_init)


def mu_cap(rho: float) -> float:
    return 1.0 / rho + 1.0


def endurance_bound(T: int, rho: float, mu_init: float) -> float:
    """Bound on ``T - tau`` for min pacing with ``eta = 1/sqrt(T)``."""
    return math.sqrt(T) / rho * math.log(10.0 * mu_cap(rho) / mu_init)


def check_trajectory(traj: Trajectory, *, bounded: bool = False, bid_capped: bool = False,
                     rtol: float = 1e-9) -> None:
    """Raise :class:`InvariantViolation` if a guaranteed property fails.

    Always checked: positive duals, budget feasibility, zero activity after
    the stop.  For min pacing on streams whose payments never exceed the bid:
    the per-round gradient lower bounds, and with ``alpha = 1/sqrt(T)`` the
    ex-post ROS bound.  On bounded streams with ``eta = 1/sqrt(T)`` also the
    budget-dual cap and budget endurance.
    """
    cfg = traj.config
    T = traj.T
    if not (np.all(traj.lam > 0) and np.all(traj.mu >= 0)):
        raise InvariantViolation("dual variables left the positive orthant")
    if traj.kind is not PacerKind.DUAL_OPTIMAL and not np.all(traj.mu > 0):
        raise InvariantViolation("budget dual reached zero")
    if traj.spent[-1] > cfg.budget:
        raise InvariantViolation(f"spend {traj.spent[-1]} exceeds budget {cfg.budget}")
    if np.any(np.diff(traj.spent) < 0):
        raise InvariantViolation("cumulative spend decreased")
    if traj.stop_round >= 0:
        after = slice(traj.stop_round + 1, None)
        if np.any(traj.payment[after] != 0) or np.any(traj.bid[after] != 0):
            raise InvariantViolation("activity after the pacer stopped")
    if traj.kind is not PacerKind.MIN or not bid_capped:
        return
    live = traj.bid > 0
    g_ros = traj.value_gained - traj.payment
    g_bud = cfg.rho - traj.payment
    tol = rtol * (1.0 + np.abs(traj.value_gained) + np.abs(traj.payment))
    if np.any((g_ros < -traj.value_gained / traj.lam - tol) & live):
        raise InvariantViolation("ROS gradient below -v*x/lambda")
    if np.any((g_bud < cfg.rho - traj.value_gained / traj.mu - tol) & live):
        raise InvariantViolation("budget gradient below rho - v*x/mu")
    if math.isclose(cfg.alpha, 1.0 / math.sqrt(T), rel_tol=1e-12):
        bound = ros_violation_bound(T, cfg.lambda_init)
        if bound > 0 and traj.ros_violation > bound:
            raise InvariantViolation(f"ROS violation {traj.ros_violation} exceeds {bound}")
    if bounded and math.isclose(cfg.eta, 1.0 / math.sqrt(T), rel_tol=1e-12) \
            and cfg.mu_init <= mu_cap(cfg.rho):
        tau = traj.stopping_time
        if np.any(traj.mu[:tau] > mu_cap(cfg.rho) * (1 + rtol)):
            raise InvariantViolation("budget dual exceeded 1/rho + 1 before the stopping time")
        if T - tau > endurance_bound(T, cfg.rho, cfg.mu_init):
            raise InvariantViolation("budget ran out too early")
