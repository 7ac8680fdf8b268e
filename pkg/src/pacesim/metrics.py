"""Episode and fleet measurements."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .pacing import Trajectory

DEFAULT_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(11)) + (math.inf,)
Z95 = 1.959963984540054


@dataclass(frozen=True)
class EpisodeResult:
    reward: float
    spend: float
    ros_violation: float
    stopping_time: int
    endurance_gap: int
    relative_ros_error: float
    benchmark_value: float

    def as_dict(self) -> dict:
        return asdict(self)


def relative_ros_error(reward: float, spend: float) -> float:
    """``max(0, spend/reward - 1)``; infinite for spend without reward, zero when idle."""
    if reward > 0:
        return max(0.0, spend / reward - 1.0)
    return math.inf if spend > 0 else 0.0


def summarize(trajectory: Trajectory, benchmark_value: float = math.nan) -> EpisodeResult:
    reward = trajectory.reward
    spend = trajectory.total_spend
    tau = trajectory.stopping_time
    return EpisodeResult(
        reward=reward,
        spend=spend,
        ros_violation=spend - reward,
        stopping_time=tau,
        endurance_gap=trajectory.T - tau,
        relative_ros_error=relative_ros_error(reward, spend),
        benchmark_value=float(benchmark_value),
    )


@dataclass(frozen=True)
class RegretEstimate:
    mean_regret: float
    ci: tuple[float, float]


def regret_estimate(results: Sequence[EpisodeResult], opt_per_round: float, T: int) -> RegretEstimate:
    """Mean of ``T * opt_per_round - reward`` over seeds with a normal 95% interval.

    With a single seed the interval collapses to the point estimate.
    """
    if not results:
        raise ValueError("regret estimate needs at least one episode")
    regrets = np.array([T * opt_per_round - r.reward for r in results])
    mean = float(np.mean(regrets))
    if len(regrets) < 2:
        return RegretEstimate(mean, (mean, mean))
    half = Z95 * float(np.std(regrets, ddof=1)) / math.sqrt(len(regrets))
    return RegretEstimate(mean, (mean - half, mean + half))


@dataclass(frozen=True)
class BucketTable:
    thresholds: tuple
    fraction: tuple
    cumulative_value: tuple

    def rows(self):
        return list(zip(self.thresholds, self.fraction, self.cumulative_value))


def bucket_table(errors: Sequence[float], rewards: Sequence[float], benchmarks: Sequence[float],
                 thresholds: Optional[Sequence[float]] = None) -> BucketTable:
    """Cumulative share of campaigns and of benchmark value by ROS relative error.

    For each threshold ``z``: the fraction of campaigns with error ``<= z`` and
    the reward of those campaigns divided by the total benchmark of all of
    them.  The second column can exceed one, since violating campaigns may
    collect more than their benchmark.
    """
    thresholds = tuple(DEFAULT_THRESHOLDS if thresholds is None else thresholds)
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    if not thresholds or thresholds[-1] != math.inf:
        raise ValueError("thresholds must end with infinity")
    errors = np.asarray(errors, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    benchmarks = np.asarray(benchmarks, dtype=float)
    if not (len(errors) == len(rewards) == len(benchmarks)):
        raise ValueError("errors, rewards and benchmarks must have equal length")
    n = len(errors)
    total = float(np.sum(benchmarks))
    fraction, value = [], []
    for z in thresholds:
        inside = errors <= z
        fraction.append(float(np.sum(inside)) / n if n else 0.0)
        value.append(float(np.sum(rewards[inside])) / total if total > 0 else 0.0)
    return BucketTable(thresholds, tuple(fraction), tuple(value))
