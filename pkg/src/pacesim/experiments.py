"""Packaged studies: horizon scaling, the sequential-pacing failure, dual
convergence and fleet-level bucket tables.

Every episode's randomness is keyed by ``(master_seed, T, seed)`` (plus the
campaign index for fleets), so different pacers see the same auction stream
and results do not depend on how work is split across processes.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import oracle
from .environments import (AdversarialInstance, SemiSyntheticEnv, campaign_fleet, make_rng)
from .metrics import (DEFAULT_THRESHOLDS, BucketTable, EpisodeResult, bucket_table,
                      relative_ros_error, summarize)
from .pacing import PacerConfig, PacerKind, run_episode

METRICS = ("regret", "ros_violation", "endurance")
DEFAULT_STEP_GRID = (0.3, 1.0, 3.0)
BOOTSTRAP_RESAMPLES = 1000


def _pmap(fn: Callable, tasks: Sequence, jobs: int = 1) -> list:
    """Map in task order; ``jobs > 1`` uses a process pool."""
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def episode_rng(master_seed: int, T: int, seed: int, *extra: int) -> np.random.Generator:
    return make_rng(master_seed, T, seed, *extra)


def benchmark_per_round(env, n_samples: int = oracle.DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Per-round value of the best uniform multiplier.

    Uses analytic gradients when the environment has them, the fluid line
    search for campaigns, and Monte Carlo otherwise.
    """
    if isinstance(env, SemiSyntheticEnv):
        return oracle.fluid_benchmark(env.campaign).conv_star
    if hasattr(env, "closed_form_gradients"):
        c = oracle.closed_form_crossings(env, allow_missing=True)
        g_b, g_r = env.closed_form_gradients(c.k_star)
        return g_r + env.rho - g_b
    c = oracle.crossing_points(env, n_samples=n_samples, seed=seed, allow_missing=True)
    return oracle.optimal_value_per_round(env, c, n_samples=n_samples, seed=seed).value


# --------------------------------------------------------------------------
# plain episode batches


@dataclass(frozen=True)
class EpisodeSpec:
    kind: PacerKind
    env: object
    T: int
    seed: int
    config: PacerConfig
    master_seed: int = 0
    benchmark: float = math.nan
    check_invariants: bool = False


@dataclass(frozen=True)
class EpisodeRecord:
    kind: PacerKind
    env_name: str
    T: int
    seed: int
    result: EpisodeResult


def _run_spec(spec: EpisodeSpec) -> EpisodeRecord:
    stream = spec.env.stream(spec.T, episode_rng(spec.master_seed, spec.T, spec.seed))
    traj = run_episode(spec.kind, stream, spec.config, check_invariants=spec.check_invariants)
    return EpisodeRecord(spec.kind, spec.env.name, spec.T, spec.seed,
                         summarize(traj, spec.benchmark))


def run_episodes(kind, env, T: int, seeds: Iterable[int], config: Optional[PacerConfig] = None,
                 master_seed: int = 0, jobs: int = 1, check_invariants: bool = False,
                 benchmark: Optional[float] = None) -> list[EpisodeRecord]:
    """One episode per seed; ``benchmark`` defaults to ``T`` times the per-round benchmark."""
    kind = PacerKind.parse(kind)
    config = config or PacerConfig(rho=env.rho)
    if benchmark is None:
        benchmark = T * benchmark_per_round(env)
    specs = [EpisodeSpec(kind, env, T, s, config, master_seed, benchmark, check_invariants)
             for s in sorted(seeds)]
    return _pmap(_run_spec, specs, jobs)


# --------------------------------------------------------------------------
# scaling in the horizon


@dataclass
class ScalingResult:
    kind: PacerKind
    env_name: str
    metric: str
    T_list: list
    means: list
    slope: Optional[float]
    slope_ci: Optional[tuple]
    nonpositive: bool
    records: list = field(repr=False, default_factory=list)

    @property
    def report(self) -> str:
        if self.nonpositive:
            return "metric nonpositive"
        lo, hi = self.slope_ci
        return f"slope {self.slope:.3f} (95% CI {lo:.3f} to {hi:.3f})"


def _metric_value(rec: EpisodeRecord, metric: str) -> float:
    r = rec.result
    if metric == "regret":
        return r.benchmark_value - r.reward
    if metric == "ros_violation":
        return r.ros_violation
    return float(r.endurance_gap)


def loglog_slope(T_list: Sequence[float], means: Sequence[float]) -> float:
    """OLS slope of ``log(max(mean, 1))`` on ``log T``."""
    x = np.log(np.asarray(T_list, dtype=float))
    y = np.log(np.maximum(np.asarray(means, dtype=float), 1.0))
    return float(np.polyfit(x, y, 1)[0])


def scaling_study(kind, env, T_list: Sequence[int], seeds: int = 30, metric: str = "regret",
                  config: Optional[PacerConfig] = None, master_seed: int = 0, jobs: int = 1,
                  bootstrap: int = BOOTSTRAP_RESAMPLES) -> ScalingResult:
    """Mean of ``metric`` at each horizon and its log-log slope in ``T``.

    Step sizes left as ``None`` in ``config`` resolve to ``1/sqrt(T)`` per
    horizon.  The confidence interval resamples seeds independently at each
    horizon.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    T_list = sorted(int(T) for T in T_list)
    if len(T_list) < 3:
        raise ValueError("need >= 3 horizons for a scaling study")
    if seeds < 1:
        raise ValueError("need at least one seed")
    kind = PacerKind.parse(kind)
    config = config or PacerConfig(rho=env.rho)
    per_round = benchmark_per_round(env) if metric == "regret" else math.nan
    specs = [EpisodeSpec(kind, env, T, s, config, master_seed, T * per_round)
             for T in T_list for s in range(seeds)]
    records = _pmap(_run_spec, specs, jobs)
    table = np.array([[_metric_value(r, metric) for r in records if r.T == T] for T in T_list])
    means = table.mean(axis=1)
    if np.all(means <= 0):
        return ScalingResult(kind, env.name, metric, T_list, means.tolist(), None, None, True, records)
    slope = loglog_slope(T_list, means)
    rng = make_rng(master_seed, 999)
    boot = np.empty(bootstrap)
    for b in range(bootstrap):
        idx = rng.integers(seeds, size=(len(T_list), seeds))
        boot[b] = loglog_slope(T_list, np.take_along_axis(table, idx, axis=1).mean(axis=1))
    ci = (float(np.percentile(boot, 2.5)), float(np.percentile(boot, 97.5)))
    return ScalingResult(kind, env.name, metric, T_list, means.tolist(), slope, ci, False, records)


# --------------------------------------------------------------------------
# the two-instance failure of sequential pacing


@dataclass(frozen=True)
class FailureVerdict:
    T: int
    mode: str  # "ros", "regret" or "none"
    ros_spend: float
    ros_violation: float
    regret: Optional[float]
    magnitude: float  # failing metric per round; 0 when mode is "none"

    @property
    def failing_metric(self) -> float:
        return self.magnitude * self.T


@dataclass
class FailureReport:
    kind: PacerKind
    mu0: float
    lambda0: float
    c: float
    verdicts: list
    slope: Optional[float]

    @property
    def always_fails(self) -> bool:
        return all(v.mode != "none" for v in self.verdicts)

    @property
    def never_fails(self) -> bool:
        return all(v.mode == "none" for v in self.verdicts)


def sequential_failure_demo(mu0: float = 1.0, lambda0: float = 1.0, eta: Optional[float] = None,
                            alpha: Optional[float] = None, T_list: Sequence[int] = (1000, 10000, 100000),
                            c: float = 0.01, kind=PacerKind.SEQUENTIAL) -> FailureReport:
    """Run ``kind`` on the ROS-bound instance and, if it stays near feasible
    there, on the budget-bound instance.

    On the ROS-bound instance the run fails when total spend reaches ``0.6 T``
    or the ROS violation reaches ``c T``.  Otherwise the budget-bound run
    fails when its regret against ``T / (20 mu0^2)`` reaches ``c T``.  Step
    sizes left as ``None`` mean ``1/sqrt(T)``.
    """
    if mu0 <= 0 or lambda0 <= 0 or c <= 0:
        raise ValueError("mu0, lambda0 and c must be positive")
    kind = PacerKind.parse(kind)
    ros_env = AdversarialInstance("ros")
    bud_env = AdversarialInstance("budget", mu0=mu0)
    verdicts = []
    for T in sorted(T_list):
        cfg = PacerConfig(rho=ros_env.rho, alpha=alpha, eta=eta, lambda_init=lambda0, mu_init=mu0)
        tr = run_episode(kind, ros_env.stream(T), cfg)
        spend, viol = tr.total_spend, tr.ros_violation
        if spend >= 0.6 * T or viol >= c * T:
            verdicts.append(FailureVerdict(T, "ros", spend, viol, None, max(viol, 0.0) / T))
            continue
        tr_b = run_episode(kind, bud_env.stream(T), replace(cfg, rho=bud_env.rho))
        regret = T / (20.0 * mu0**2) - tr_b.reward
        mode = "regret" if regret >= c * T else "none"
        verdicts.append(FailureVerdict(T, mode, spend, viol, regret,
                                       regret / T if mode == "regret" else 0.0))
    slope = None
    if len(verdicts) >= 2 and all(v.mode != "none" for v in verdicts):
        slope = loglog_slope([v.T for v in verdicts], [v.failing_metric for v in verdicts])
    return FailureReport(kind, mu0, lambda0, c, verdicts, slope)


# --------------------------------------------------------------------------
# convergence of the bid multiplier


@dataclass(frozen=True)
class ConvergenceResult:
    k_star: float
    per_seed: tuple  # median |k_t - k*| over the last quarter, one per seed

    @property
    def median(self) -> float:
        return float(np.median(self.per_seed))

    @property
    def worst(self) -> float:
        return float(np.max(self.per_seed))


def _probe(args):
    kind, env, T, seed, config, master_seed, k_star = args
    tr = run_episode(kind, env.stream(T, episode_rng(master_seed, T, seed)), config)
    tail = tr.multiplier[T - T // 4:]
    return float(np.median(np.abs(tail - k_star)))


def convergence_probe(kind, env, T: int = 100_000, seeds: int = 10,
                      config: Optional[PacerConfig] = None, k_star: Optional[float] = None,
                      master_seed: int = 0, jobs: int = 1,
                      n_samples: int = oracle.DEFAULT_SAMPLES) -> ConvergenceResult:
    """Distance of the multiplier from ``k*`` over the final quarter of the horizon."""
    kind = PacerKind.parse(kind)
    if T < 4:
        raise ValueError("horizon too short for a final quarter")
    if k_star is None:
        k_star = oracle.crossing_points(env, n_samples=n_samples).k_star
    config = config or PacerConfig(rho=env.rho)
    tasks = [(kind, env, T, s, config, master_seed, k_star) for s in range(seeds)]
    return ConvergenceResult(float(k_star), tuple(_pmap(_probe, tasks, jobs)))


# --------------------------------------------------------------------------
# fleet of campaigns


@dataclass(frozen=True)
class CampaignRow:
    campaign: int
    reward: float
    spend: float
    relative_ros_error: float
    benchmark: float


@dataclass
class FleetResult:
    kind: PacerKind
    step_pair: tuple  # (alpha, eta) multipliers of 1/sqrt(T)
    table: BucketTable
    campaigns: list
    grid_scores: dict = field(default_factory=dict)


def _fleet_campaign(args):
    """Averages over seeds for every (kind, step pair) on one campaign."""
    idx, campaign, kinds, pairs, seeds, master_seed, T = args
    env = SemiSyntheticEnv(campaign)
    T = T or campaign.T
    benchmark = T * oracle.fluid_benchmark(campaign).conv_star
    streams = [env.stream(T, episode_rng(master_seed, T, s, idx)) for s in range(seeds)]
    out = {}
    for kind in kinds:
        for a_mult, e_mult in pairs:
            cfg = PacerConfig(rho=campaign.rho, alpha=a_mult / math.sqrt(T), eta=e_mult / math.sqrt(T))
            rewards, spends = [], []
            for st in streams:
                tr = run_episode(kind, st, cfg)
                rewards.append(tr.reward)
                spends.append(tr.total_spend)
            r, s = float(np.mean(rewards)), float(np.mean(spends))
            out[(kind, (a_mult, e_mult))] = CampaignRow(idx, r, s, relative_ros_error(r, s), benchmark)
    return idx, out


def fleet_study(n_campaigns: int = 200, seeds_per_campaign: int = 10,
                kinds: Sequence = tuple(PacerKind), step_size_grid: Sequence[float] = DEFAULT_STEP_GRID,
                master_seed: int = 0, jobs: int = 1, T: Optional[int] = None,
                thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                campaigns: Optional[Sequence] = None) -> dict:
    """Bucket tables per pacer at the step sizes that maximise zero-error value.

    Per campaign, reward and spend are averaged over seeds before the ROS
    relative error is computed.  Step sizes are ``m / sqrt(T)`` for each
    multiplier ``m`` in ``step_size_grid``, searched jointly over both duals.
    Ties go to the earlier pair in grid order.
    """
    if not step_size_grid:
        raise ValueError("step-size grid is empty")
    kinds = [PacerKind.parse(k) for k in kinds]
    if campaigns is None:
        campaigns = campaign_fleet(n_campaigns, master_seed)
    pairs = list(itertools.product(step_size_grid, step_size_grid))
    tasks = [(i, c, kinds, pairs, seeds_per_campaign, master_seed, T) for i, c in enumerate(campaigns)]
    per_campaign = dict(_pmap(_fleet_campaign, tasks, jobs))
    order = sorted(per_campaign)
    results = {}
    for kind in kinds:
        best, best_score, scores = None, -math.inf, {}
        for pair in pairs:
            rows = [per_campaign[i][(kind, pair)] for i in order]
            table = bucket_table([r.relative_ros_error for r in rows], [r.reward for r in rows],
                                 [r.benchmark for r in rows], thresholds)
            scores[pair] = table.cumulative_value[0]
            if table.cumulative_value[0] > best_score:
                best, best_score = (pair, table, rows), table.cumulative_value[0]
        results[kind] = FleetResult(kind, best[0], best[1], best[2], scores)
    return results
