"""Benchmark: numba batch kernel vs the pure-numpy lockstep fallback.

Usage:  python benchmarks/bench_sim.py [n_paths] [n_steps]

Runs the same workload through both backends (selected via
LEVY_RESTOCK_BACKEND), checks that the outputs agree, and reports
throughput in path-steps per second.
"""

import os
import sys
import time
import warnings

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from levy_restock.costs import CostSpec          # noqa: E402
from levy_restock.model import LevyModel         # noqa: E402
from levy_restock.sim import HybridSim, SimConfig, _simulate_batch  # noqa: E402
from levy_restock.sim._kernels import HAVE_NUMBA  # noqa: E402


def run(backend: str, cfg, model, spec, xs):
    os.environ["LEVY_RESTOCK_BACKEND"] = backend
    try:
        t0 = time.perf_counter()
        out = _simulate_batch(model, spec, cfg, xs)
        return out, time.perf_counter() - t0
    finally:
        del os.environ["LEVY_RESTOCK_BACKEND"]


def main():
    n_paths = int(sys.argv[1]) if len(sys.argv) > 1 else 400
    n_steps = int(sys.argv[2]) if len(sys.argv) > 2 else 20000
    warnings.simplefilter("ignore")
    model = LevyModel(delta=1.0, sigma=1.0, jumps=((0.2, 1.0),))
    spec = CostSpec(q=0.05, lam=2.0, K_c=10.0, K_p=2.0,
                    f_pieces=[(None, [0.0, 0.0, 1.0])])
    dt = 1e-3
    cfg = SimConfig(dt=dt, horizon=n_steps * dt, n_paths=n_paths, seed=42,
                    x0=-17.0, policy=HybridSim(-17.3, -16.5))
    xs = np.array([-17.0])
    total = n_paths * n_steps

    if HAVE_NUMBA:
        run("numba", SimConfig(dt=dt, horizon=10 * dt, n_paths=2, seed=0,
                               x0=-17.0, policy=cfg.policy), model, spec, xs)
        out_nb, t_nb = run("numba", cfg, model, spec, xs)
        print(f"numba : {t_nb:8.3f} s   {total / t_nb / 1e6:8.2f} M path-steps/s")
    else:
        out_nb, t_nb = None, None
        print("numba : not available")

    out_np, t_np = run("numpy", cfg, model, spec, xs)
    print(f"numpy : {t_np:8.3f} s   {total / t_np / 1e6:8.2f} M path-steps/s")

    if out_nb is not None:
        err = np.max(np.abs(out_nb - out_np) / (1.0 + np.abs(out_nb)))
        print(f"speedup {t_np / t_nb:6.1f}x   max relative deviation {err:.2e}")


if __name__ == "__main__":
    main()
