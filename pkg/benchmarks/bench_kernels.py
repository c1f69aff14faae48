"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20] [--solve]

Each kernel is run on inputs sized like the full experiment (MN = Q = 36,
P = 20, L*R = 320). ``--solve`` also times one ADMM solve end to end in two
subprocesses, with and without ``ONEBIT_MIMO_NO_NUMBA=1``.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from onebit_mimo import kernels

SOLVE_SNIPPET = """
import time
from onebit_mimo.harness import PRESETS, simulate_cpi
from onebit_mimo.anm_solver import SolverParams, solve_1b_anm_l1
from onebit_mimo.scene import RadarConfig, reference_scene
cfg = RadarConfig(**PRESETS["setting1"])
cpi = simulate_cpi(cfg, reference_scene(0.0, seed=0), 0, {"strategy": "RUT"})
solve_1b_anm_l1(cpi.z, cpi.thresholds.h, cpi.masks, cpi.S, SolverParams(max_iters=5))
t = time.perf_counter()
res = solve_1b_anm_l1(cpi.z, cpi.thresholds.h, cpi.masks, cpi.S, SolverParams(max_iters=200))
print(f"{time.perf_counter() - t:.3f} {res.iterations}")
"""


def cases(rng):
    n = 72
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    u = rng.standard_normal(36) + 1j * rng.standard_normal(36)
    x = rng.standard_normal(20 * 320) + 1j * rng.standard_normal(20 * 320)
    a1 = rng.standard_normal(20 * 320) + 1j * rng.standard_normal(20 * 320)
    a2 = 0.3 * (rng.standard_normal(20 * 320) + 1j * rng.standard_normal(20 * 320))
    J = rng.standard_normal((20 * 320, 16))
    w = rng.random(20 * 320)
    return [
        ("subdiag_traces", "72x72", kernels.subdiag_traces_nb, kernels.subdiag_traces_np, (A,)),
        ("hermitian_toeplitz", "36", kernels.hermitian_toeplitz_nb, kernels.hermitian_toeplitz_np, (u,)),
        ("soft_threshold", "6400", kernels.soft_threshold_nb, kernels.soft_threshold_np, (x, 0.5)),
        ("minimal_perturbation", "6400", kernels.minimal_perturbation_nb,
         kernels.minimal_perturbation_np, (a1, a2)),
        ("weighted_gram", "6400x16", kernels.weighted_gram_nb, kernels.weighted_gram_np, (J, w)),
    ]


def best_ms(f, args, repeat):
    number = max(1, int(0.02 / max(timeit.timeit(lambda: f(*args), number=1), 1e-7)))
    t = min(timeit.repeat(lambda: f(*args), number=number, repeat=repeat))
    return 1e3 * t / number


def time_solve(no_numba):
    env = {**os.environ, "ONEBIT_MIMO_NO_NUMBA": "1" if no_numba else "0"}
    out = subprocess.run([sys.executable, "-c", SOLVE_SNIPPET], env=env, check=True,
                         capture_output=True, text=True).stdout.split()
    return float(out[0]), int(out[1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--solve", action="store_true", help="also time a full solve per path")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"{'kernel':22s} {'size':>9s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, size, nb, fallback, inputs in cases(rng):
        ref = fallback(*inputs)
        got = nb(*inputs)  # also triggers compilation
        if not np.allclose(got, ref, rtol=1e-12, atol=1e-12):
            raise SystemExit(f"{name}: numba and numpy results differ")
        t_nb = best_ms(nb, inputs, args.repeat)
        t_np = best_ms(fallback, inputs, args.repeat)
        print(f"{name:22s} {size:>9s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.2f}")

    if args.solve:
        for label, flag in (("numba", False), ("numpy", True)):
            sec, it = time_solve(flag)
            print(f"solve setting1 ({label}): {sec:.3f} s for {it} iterations")


if __name__ == "__main__":
    main()
