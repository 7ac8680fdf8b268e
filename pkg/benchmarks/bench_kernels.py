"""Wall-clock comparison of the compiled and pure-Python episode kernels.

    python benchmarks/bench_kernels.py [--T 100000] [--repeat 3]

Both backends run the same streams; the script also confirms that they
produce identical trajectories.
"""
import argparse
import time

import numpy as np

from pacesim import kernels
from pacesim.environments import (AdversarialInstance, ExponentialSecondPriceEnv, SemiSyntheticEnv,
                                  generate_synthetic_campaign, make_rng)
from pacesim.pacing import PacerConfig, PacerKind, run_episode


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        raise SystemExit("compiled kernel not built; run `pip install --no-build-isolation -e .` first")

    envs = [ExponentialSecondPriceEnv(), AdversarialInstance("ros"),
            SemiSyntheticEnv(generate_synthetic_campaign(make_rng(0, 7, 0)))]
    print(f"{'env':<18}{'pacer':<14}{'cython s':>10}{'python s':>10}{'speedup':>9}  identical")
    for env in envs:
        stream = env.stream(args.T, make_rng(0, args.T, 0))
        for kind in PacerKind:
            cfg = PacerConfig(rho=env.rho)
            tc, a = best_time(lambda: run_episode(kind, stream, cfg, backend="cython"), args.repeat)
            tp, b = best_time(lambda: run_episode(kind, stream, cfg, backend="python"), args.repeat)
            same = all(np.array_equal(getattr(a, f), getattr(b, f))
                       for f in ("bid", "payment", "lam", "mu", "spent"))
            print(f"{env.name:<18}{kind.value:<14}{tc:>10.4f}{tp:>10.4f}{tp / tc:>8.1f}x  {same}")


if __name__ == "__main__":
    main()
