"""Command-line entry point: ``pacesim {run,scale,demo-seq,fleet,oracle}``.

Configuration comes from flags, a JSON file (``--config``) or both; flags
given explicitly override the file.  Output goes to ``--out``, or to
``$PACESIM_OUT``, or to ``./pacesim-out``.

Exit codes: 0 success, 2 configuration error, 3 violated modelling assumption
(for instance no single crossing), 4 violated runtime invariant.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, experiments, kernels, oracle
from .auction import AuctionDomainError
from .environments import ENV_NAMES, make_env
from .pacing import InvariantViolation, PacerConfig, PacerKind

log = logging.getLogger("pacesim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_INVARIANT = 4

COMMANDS = ("run", "scale", "demo-seq", "fleet", "oracle")
EPISODE_COLUMNS = ("pacer", "env", "T", "seed", "reward", "spend", "ros_violation", "tau",
                   "endurance_gap", "relative_ros_error", "benchmark")
DEFAULT_OUT = "pacesim-out"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    pacer: list = field(default_factory=lambda: ["min"])
    env: str = "adversarial-ros"
    T: list = field(default_factory=lambda: [10000])
    rho: Optional[float] = None
    alpha: object = "auto"
    eta: object = "auto"
    lambda_init: float = 1.0
    mu_init: Optional[float] = None
    seeds: int = 1
    master_seed: int = 0
    jobs: int = 1
    out: Optional[str] = None
    check: bool = True
    metric: str = "regret"
    mu0: float = 1.0
    threshold: float = 0.01
    campaigns: int = 200
    step_grid: list = field(default_factory=lambda: list(experiments.DEFAULT_STEP_GRID))
    campaign_file: Optional[str] = None
    campaign_seed: int = 0
    samples: int = oracle.DEFAULT_SAMPLES

    def env_params(self) -> dict:
        params = {"mu0": self.mu0, "campaign_seed": self.campaign_seed}
        if self.campaign_file:
            params["campaign_file"] = self.campaign_file
        if self.rho is not None and self.env in ("exponential", "uniform"):
            params["rho"] = self.rho
        return params

    def pacer_config(self, env) -> PacerConfig:
        return PacerConfig(
            rho=self.rho if self.rho is not None else env.rho,
            alpha=None if self.alpha == "auto" else float(self.alpha),
            eta=None if self.eta == "auto" else float(self.eta),
            lambda_init=self.lambda_init,
            mu_init=self.mu_init,
        )

    def kinds(self) -> list:
        return [PacerKind.parse(p) for p in self.pacer]

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _step(name, value):
    if value == "auto" or value is None:
        return "auto"
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number or 'auto'") from None
    if value < 0:
        raise ConfigError(f"{name} must be nonnegative")
    return value


def validate(cfg: RunConfig) -> RunConfig:
    """Normalise types and re-check every positivity constraint."""
    if cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}; expected one of {COMMANDS}")
    cfg.pacer = _as_list(cfg.pacer)
    try:
        cfg.kinds()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.env not in ENV_NAMES:
        raise ConfigError(f"unknown environment {cfg.env!r}; expected one of {ENV_NAMES}")
    try:
        cfg.T = [int(t) for t in _as_list(cfg.T)]
    except (TypeError, ValueError):
        raise ConfigError("T must be an integer or a list of integers") from None
    if any(t < 1 for t in cfg.T):
        raise ConfigError("invalid horizon: T must be a positive integer")
    if cfg.command == "scale" and len(set(cfg.T)) < 3:
        raise ConfigError("need >= 3 horizons for a scaling study")
    cfg.alpha = _step("alpha", cfg.alpha)
    cfg.eta = _step("eta", cfg.eta)
    for name in ("rho", "mu_init"):
        val = getattr(cfg, name)
        if val is not None and not float(val) > 0:
            raise ConfigError(f"{name} must be positive")
    for name in ("lambda_init", "mu0", "threshold"):
        if not float(getattr(cfg, name)) > 0:
            raise ConfigError(f"{name} must be positive")
    for name in ("seeds", "jobs", "campaigns", "samples"):
        if int(getattr(cfg, name)) < 1:
            raise ConfigError(f"{name} must be at least 1")
    if cfg.metric not in experiments.METRICS:
        raise ConfigError(f"unknown metric {cfg.metric!r}; expected one of {experiments.METRICS}")
    cfg.step_grid = [float(s) for s in _as_list(cfg.step_grid)]
    if not cfg.step_grid or any(s <= 0 for s in cfg.step_grid):
        raise ConfigError("step grid must be nonempty and positive")
    return cfg


def load_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return data


def parse_config(command: str, file_values: Optional[dict] = None, **flags) -> RunConfig:
    """Merge file values and explicit flags (flags win) into a validated config."""
    values = dict(file_values or {})
    values.pop("command", None)
    values.update({k: v for k, v in flags.items() if v is not None})
    unknown = set(values) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return validate(RunConfig(command=command, **values))


# --------------------------------------------------------------------------
# output


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if x is None:
        return ""
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: RunConfig, files: Sequence[Path], extra: Optional[dict] = None) -> Path:
    config = cfg.as_dict()
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": cfg.command,
        "config": config,
        "input_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "outputs": {p.name: _sha256(p) for p in files},
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
        "created": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _episode_row(rec):
    r = rec.result
    return (rec.kind.value, rec.env_name, rec.T, rec.seed, r.reward, r.spend, r.ros_violation,
            r.stopping_time, r.endurance_gap, r.relative_ros_error, r.benchmark_value)


def output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out or os.environ.get("PACESIM_OUT") or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands


def cmd_run(cfg: RunConfig, out: Path) -> list:
    env = make_env(cfg.env, **cfg.env_params())
    pcfg = cfg.pacer_config(env)
    records = []
    for T in cfg.T:
        bench = T * experiments.benchmark_per_round(env, n_samples=cfg.samples)
        for kind in cfg.kinds():
            records += experiments.run_episodes(kind, env, T, range(cfg.seeds), pcfg, cfg.master_seed,
                                                cfg.jobs, check_invariants=cfg.check, benchmark=bench)
    episodes = write_csv(out / "episodes.csv", EPISODE_COLUMNS, map(_episode_row, records))
    summary_rows = []
    for T in cfg.T:
        for kind in cfg.kinds():
            rs = [r.result for r in records if r.T == T and r.kind is kind]
            summary_rows.append((kind.value, env.name, T, len(rs),
                                 float(np.mean([r.reward for r in rs])),
                                 float(np.mean([r.spend for r in rs])),
                                 float(np.mean([r.ros_violation for r in rs])),
                                 float(np.mean([r.endurance_gap for r in rs])),
                                 rs[0].benchmark_value))
            print(f"{kind.value} {env.name} T={T}: mean reward {summary_rows[-1][4]:.4f}, "
                  f"mean ROS violation {summary_rows[-1][6]:.4f} over {len(rs)} episodes")
    summary = write_csv(out / "summary.csv", ("pacer", "env", "T", "episodes", "mean_reward", "mean_spend",
                                              "mean_ros_violation", "mean_endurance_gap", "benchmark"),
                        summary_rows)
    return [episodes, summary]


def cmd_scale(cfg: RunConfig, out: Path) -> list:
    env = make_env(cfg.env, **cfg.env_params())
    pcfg = cfg.pacer_config(env)
    records, rows = [], []
    for kind in cfg.kinds():
        res = experiments.scaling_study(kind, env, cfg.T, cfg.seeds, cfg.metric, pcfg,
                                        cfg.master_seed, cfg.jobs)
        records += res.records
        lo, hi = res.slope_ci if res.slope_ci else (None, None)
        for T, m in zip(res.T_list, res.means):
            rows.append((kind.value, env.name, cfg.metric, T, m, res.slope, lo, hi))
        print(f"{kind.value} {env.name} {cfg.metric}: {res.report}")
    episodes = write_csv(out / "episodes.csv", EPISODE_COLUMNS, map(_episode_row, records))
    scaling = write_csv(out / "scaling.csv", ("pacer", "env", "metric", "T", "mean", "slope",
                                              "slope_ci_low", "slope_ci_high"), rows)
    return [episodes, scaling]


def cmd_demo_seq(cfg: RunConfig, out: Path) -> list:
    rows = []
    for kind in cfg.kinds():
        rep = experiments.sequential_failure_demo(
            cfg.mu0, cfg.lambda_init,
            eta=None if cfg.eta == "auto" else cfg.eta,
            alpha=None if cfg.alpha == "auto" else cfg.alpha,
            T_list=cfg.T, c=cfg.threshold, kind=kind)
        for v in rep.verdicts:
            rows.append((kind.value, cfg.mu0, cfg.lambda_init, v.T, v.mode, v.ros_spend, v.ros_violation,
                         v.regret, v.magnitude, rep.slope))
            print(f"{kind.value} T={v.T}: {v.mode} failure, per-round magnitude {v.magnitude:.4f}"
                  if v.mode != "none" else f"{kind.value} T={v.T}: no failure")
    return [write_csv(out / "demo_seq.csv", ("pacer", "mu0", "lambda0", "T", "mode", "ros_spend",
                                             "ros_violation", "regret", "per_round_magnitude", "slope"),
                      rows)]


def cmd_fleet(cfg: RunConfig, out: Path) -> list:
    res = experiments.fleet_study(cfg.campaigns, cfg.seeds, cfg.kinds(), cfg.step_grid,
                                  cfg.master_seed, cfg.jobs, T=cfg.T[0])
    table_rows, campaign_rows = [], []
    for kind, r in res.items():
        for z, frac, val in r.table.rows():
            table_rows.append((kind.value, r.step_pair[0], r.step_pair[1], z, frac, val))
        for c in r.campaigns:
            campaign_rows.append((kind.value, c.campaign, c.reward, c.spend, c.relative_ros_error,
                                  c.benchmark))
        print(f"{kind.value}: steps {r.step_pair}, zero-error fraction {r.table.fraction[0]:.3f}, "
              f"zero-error value {r.table.cumulative_value[0]:.3f}")
    tables = write_csv(out / "fleet_tables.csv", ("pacer", "alpha_mult", "eta_mult", "threshold",
                                                  "fraction", "cumulative_value"), table_rows)
    campaigns = write_csv(out / "fleet_campaigns.csv", ("pacer", "campaign", "reward", "spend",
                                                        "relative_ros_error", "benchmark"), campaign_rows)
    return [tables, campaigns]


def cmd_oracle(cfg: RunConfig, out: Path) -> list:
    env = make_env(cfg.env, **cfg.env_params())
    rho = cfg.rho if cfg.rho is not None else env.rho
    c = oracle.crossing_points(env, rho=rho, seed=cfg.master_seed, n_samples=cfg.samples,
                               allow_missing=True)
    lam, mu = c.optimal_duals()
    d = oracle.dual_function(env, lam, mu, n_samples=cfg.samples, seed=cfg.master_seed, rho=rho)
    rows = [("k_budget", c.k_budget, c.se_budget), ("k_ros", c.k_ros, c.se_ros),
            ("k_star", c.k_star, None), ("lambda_star", lam, None), ("mu_star", mu, None),
            ("dual_value", d.value, d.stderr)]
    if hasattr(env, "campaign"):
        b = oracle.fluid_benchmark(env.campaign)
        rows += [("fluid_k_star", b.k_star, None), ("fluid_conv_star", b.conv_star, None),
                 ("fluid_spend_star", b.spend_star, None)]
    for name, val, se in rows:
        print(f"{name} = {val:.6g}" + (f" (se {se:.2g})" if se else ""))
    print(f"binding = {c.binding}")
    return [write_csv(out / "oracle.csv", ("quantity", "value", "stderr"), rows)]


# defaults that differ from RunConfig's for one command
COMMAND_DEFAULTS = {
    "demo-seq": {"pacer": ["sequential"], "T": [1000, 10000, 100000]},
    "fleet": {"pacer": [k.value for k in PacerKind], "T": [144], "seeds": 10},
    "scale": {"T": [1000, 10000, 100000], "seeds": 30},
}

HANDLERS = {"run": cmd_run, "scale": cmd_scale, "demo-seq": cmd_demo_seq, "fleet": cmd_fleet,
            "oracle": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pacesim", description="Budget and return-on-spend pacing simulator.")
    p.add_argument("--version", action="version", version=f"pacesim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "run": "simulate episodes and write one CSV row per episode",
        "scale": "log-log slope of a metric over >= 3 horizons",
        "demo-seq": "two-instance failure of sequential pacing",
        "fleet": "bucket tables over synthetic campaigns",
        "oracle": "crossing points, optimal duals and benchmark of an environment",
    }
    for name in COMMANDS:
        s = sub.add_parser(name, help=helps[name], argument_default=argparse.SUPPRESS)
        s.add_argument("--config", help="JSON file with any of the options below (flags override it)")
        s.add_argument("--pacer", nargs="+", help="dual-optimal, sequential and/or min (default min; "
                                                  "demo-seq defaults to sequential)")
        s.add_argument("--env", choices=ENV_NAMES, help="environment (default adversarial-ros)")
        s.add_argument("--T", nargs="+", type=int, help="horizon(s) (default 10000; scale and demo-seq "
                                                         "1000 10000 100000; fleet 144)")
        s.add_argument("--rho", type=float, help="per-round budget (default: the environment's)")
        s.add_argument("--alpha", help="ROS dual step size or 'auto' for 1/sqrt(T) (default auto)")
        s.add_argument("--eta", help="budget dual step size or 'auto' for 1/sqrt(T) (default auto)")
        s.add_argument("--lambda-init", dest="lambda_init", type=float, help="initial ROS dual (default 1)")
        s.add_argument("--mu-init", dest="mu_init", type=float, help="initial budget dual (default rho)")
        s.add_argument("--seeds", type=int, help="episodes per setting (default 1; scale 30; "
                                                     "fleet 10 per campaign)")
        s.add_argument("--master-seed", dest="master_seed", type=int, help="master seed (default 0)")
        s.add_argument("--jobs", type=int, help="worker processes (default 1)")
        s.add_argument("--out", help=f"output directory (default $PACESIM_OUT or ./{DEFAULT_OUT})")
        s.add_argument("--samples", type=int, help="Monte Carlo samples for oracle quantities (default 1e6)")
        if name == "run":
            s.add_argument("--no-assert", dest="check", action="store_false",
                           help="skip the runtime invariant checks")
        if name == "scale":
            s.add_argument("--metric", choices=experiments.METRICS, help="default regret")
        if name == "demo-seq":
            s.add_argument("--mu0", type=float, help="initial budget dual of both instances (default 1)")
            s.add_argument("--threshold", type=float, help="ROS failure threshold c (default 0.01)")
        if name in ("run", "oracle"):
            s.add_argument("--campaign-file", dest="campaign_file", help="campaign landscape JSON")
            s.add_argument("--campaign-seed", dest="campaign_seed", type=int,
                           help="seed of a synthetic campaign (default 0)")
        if name == "fleet":
            s.add_argument("--campaigns", type=int, help="number of synthetic campaigns (default 200)")
            s.add_argument("--step-grid", dest="step_grid", nargs="+", type=float,
                           help="step-size multipliers of 1/sqrt(T) (default 0.3 1 3)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    try:
        file_values = load_config_file(args.pop("config")) if "config" in args else {}
        for key, value in COMMAND_DEFAULTS.get(command, {}).items():
            if key not in args and key not in file_values:
                args[key] = value
        cfg = parse_config(command, file_values, **args)
        out = output_dir(cfg)
        files = HANDLERS[command](cfg, out)
        write_manifest(out, cfg, files)
    except (ConfigError, AuctionDomainError) as exc:
        print(f"pacesim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (oracle.AssumptionViolation, oracle.NoCrossingError) as exc:
        print(f"pacesim: assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except InvariantViolation as exc:
        print(f"pacesim: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"pacesim: I/O error: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
