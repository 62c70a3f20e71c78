"""Compare the numba and pure-numpy variants of the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Kernel timings call both variants directly.  ``--end-to-end`` also runs a
small PG fit in two subprocesses, one with ``QUASIPOTTS_DISABLE_NUMBA=1``.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from quasipotts import kernels
from quasipotts.model import PottsSpec
from quasipotts.networks import diagonal_blocks


def _best(fn, repeat):
    fn()  # warm-up (includes JIT compilation)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_pg(repeat, size=20_000):
    z = np.random.default_rng(0).uniform(0, 6, size)

    def run(f):
        return lambda: f(z, np.random.default_rng(1))

    return ("pg draws", size, _best(run(kernels.pg_draw_many_numba), repeat),
            _best(run(kernels.pg_draw_many_numpy), repeat))


def bench_gibbs(repeat, p=20, sweeps=500):
    spec = PottsSpec(p)
    theta = diagonal_blocks(p, 10)
    u = np.random.default_rng(0).random((sweeps, p))
    record = np.ones(sweeps, dtype=bool)

    def run(f):
        def go():
            state = np.zeros(p, dtype=np.int64)
            out = np.empty((sweeps, p), dtype=np.int64)
            f(state, theta, spec.mf_table, spec.cp_table, u, record, out, 0)
        return go

    return ("gibbs sweeps", sweeps, _best(run(kernels.gibbs_sweeps_numba), repeat),
            _best(run(kernels.gibbs_sweeps_numpy), repeat))


def bench_flip(repeat, p=100, sweeps=200):
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, (500, p)).astype(float)
    gram = X.T @ (X * rng.uniform(0.05, 0.25, (500, 1)))
    xk = X.T @ (rng.integers(0, 2, 500) - 0.5)
    theta = rng.normal(0, 0.3, p)
    u = rng.random((sweeps, p))
    free = np.ones(p, dtype=bool)
    order = np.arange(p)

    def run(f):
        def go():
            delta = np.zeros(p, dtype=np.int8)
            for s in range(sweeps):
                f(theta, delta, gram, xk, u[s], -8.0, 100.0, free, order)
        return go

    return ("flip sweeps", sweeps, _best(run(kernels.pg_flip_sweep_numba), repeat),
            _best(run(kernels.pg_flip_sweep_numpy), repeat))


_E2E = """
import time
from quasipotts import McmcConfig, PottsSpec, default_hyperparams, diagonal_blocks, gibbs_generate, run_node
spec = PottsSpec(20)
Z = gibbs_generate(diagonal_blocks(20, 10), spec, 600, seed=1)
hp = default_hyperparams(600, 20, gamma=0.1 / 20)
cfg = McmcConfig(iterations=1000, burn_in=500)
run_node(0, Z, hp, spec, cfg)
t = time.perf_counter()
for r in range(4):
    run_node(r, Z, hp, spec, cfg)
print(time.perf_counter() - t)
"""


def end_to_end():
    times = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, QUASIPOTTS_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", _E2E], env=env, capture_output=True,
                             text=True, check=True)
        times[label] = float(out.stdout.strip())
    return ("PG fit, 4 nodes x 1000 it", 1, times["numba"], times["numpy"])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()
    rows = [bench_pg(args.repeat), bench_gibbs(args.repeat), bench_flip(args.repeat)]
    if args.end_to_end:
        rows.append(end_to_end())
    print(f"{'kernel':<28}{'calls':>8}{'numba s':>12}{'numpy s':>12}{'speedup':>10}")
    for name, calls, t_nb, t_np in rows:
        print(f"{name:<28}{calls:>8}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
