"""Wall time of the compiled kernels against their numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Both backends are timed in one process by passing ``backend=`` explicitly;
``SLIMMAP_BACKEND`` only changes the default used by the pipeline.
"""

import argparse
import time

import numpy as np

from slimmap.kernels import max_clique, schur_reduce
from slimmap.optimize import ba_problem
from slimmap.optimize.problem import CompiledProblem
from slimmap.simworld import toy_map


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def clique_case(rng, n, p):
    A = np.triu(rng.random((n, n)) < p, 1)
    return A | A.T


def schur_case(rng, n_kf, n_lm):
    m = toy_map(rng, n_kf, n_lm, noise=0.02)
    prob = ba_problem(m)
    prob.fixed = {min(m.keyframes)}
    cp = CompiledProblem(prob)
    lin = cp.linearize(cp.initial_state())
    return (lin.pose_idx, lin.lm_idx, lin.Jp, lin.Jl, lin.r, len(cp.free_ids), len(cp.lm_ids), cp.lm_dim, 1e-3, lin.H0, lin.g0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    rows = []
    for n, p in ((30, 0.5), (60, 0.5), (120, 0.3)):
        A = clique_case(rng, n, p)
        max_clique(A, "numba")  # compile outside the timed region
        t = {b: best_of(lambda b=b: max_clique(A, b), args.repeat) for b in ("numpy", "numba")}
        rows.append((f"max_clique n={n} p={p}", t))
    for n_kf, n_lm in ((10, 50), (40, 300), (80, 1000)):
        case = schur_case(rng, n_kf, n_lm)
        schur_reduce(*case, backend="numba")
        t = {b: best_of(lambda b=b: schur_reduce(*case, backend=b), args.repeat) for b in ("numpy", "numba")}
        rows.append((f"schur_reduce kf={n_kf} lm={n_lm}", t))

    print(f"{'kernel':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, t in rows:
        print(f"{name:34s} {1e3 * t['numpy']:10.2f} {1e3 * t['numba']:10.2f} {t['numpy'] / t['numba']:8.1f}")


if __name__ == "__main__":
    main()
