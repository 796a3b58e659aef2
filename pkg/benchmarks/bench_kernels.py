"""Compare the compiled and numpy M-step kernels on EM-sized problems.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from cggm_mix import _backend
from cggm_mix.datagen import HighDimConfig, ToyConfig, gen_highdim, gen_toy_2d
from cggm_mix.em import random_params, sufficient_stats
from cggm_mix.model import PenaltyConfig
from cggm_mix.penalty import solve_m_step

CASES = {
    "toy (p=2, q=1, K=2)": (lambda: gen_toy_2d(ToyConfig(seed=0))[0], 2, PenaltyConfig()),
    "highdim (p=10, q=5, K=3)": (lambda: gen_highdim(HighDimConfig(seed=0))[0], 3,
                                 PenaltyConfig(0.1, 0.1, 0.04, 0.04)),
    "wide (p=30, q=10, K=3)": (lambda: gen_highdim(HighDimConfig(n=400, p=30, q=10, seed=0))[0], 3,
                               PenaltyConfig(0.1, 0.1, 0.04, 0.04)),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _backend.compiled is None:
        raise SystemExit("compiled kernels are not built; reinstall without CGGM_MIX_NO_EXT")
    print(f"{'case':28s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s} {'max |diff|':>11s}")
    for label, (make, K, pen) in CASES.items():
        data = make()
        rng = np.random.default_rng(0)
        stats = sufficient_stats(data, rng.dirichlet(np.ones(K), size=data.n))
        init = random_params(K, data.p, data.q, 0).classes
        times, outs = {}, {}
        for which in ("python", "compiled"):
            outs[which] = solve_m_step(init, stats, pen, backend=which)
            t = timeit.repeat(lambda: solve_m_step(init, stats, pen, backend=which), number=1, repeat=args.repeat)
            times[which] = 1e3 * min(t)
        diff = max(np.abs(a.lam - b.lam).max() for a, b in zip(outs["python"], outs["compiled"]))
        print(f"{label:28s} {times['python']:10.2f} {times['compiled']:12.2f} "
              f"{times['python'] / times['compiled']:7.1f}x {diff:11.1e}")


if __name__ == "__main__":
    main()
