"""Per-path random streams.

Every path draws from generators seeded by (seed, path_index, stream), so
results are independent of execution order and batch partitioning, the
contract parallel simulation relies on.  Event times (jump arrivals and
observation arrivals) are continuous-time draws, so they are automatically
common across step-size refinements; Brownian increments support a base
resolution from which coarser grids are built by pairwise aggregation,
giving common random numbers for dt-refinement studies.
"""

from __future__ import annotations

import math

import numpy as np

STREAM_NORMALS = 0
STREAM_JUMPS = 1
STREAM_OBSERVATIONS = 2


def _generator(seed: int, path_index: int, stream: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(seed), int(path_index),
                                                int(stream)])))


def draw_normals(seed: int, path_index: int, n_steps: int,
                 fold_levels: int = 0) -> np.ndarray:
    """Standard normals per step; with ``fold_levels = k`` the draw happens at
    resolution 2^k finer and pairs are aggregated, so runs at dt and dt/2
    share the same Brownian path."""
    g = _generator(seed, path_index, STREAM_NORMALS)
    z = g.standard_normal(n_steps << fold_levels)
    for _ in range(fold_levels):
        z = (z[0::2] + z[1::2]) / math.sqrt(2.0)
    return z


def _arrival_times(g: np.random.Generator, rate: float,
                   horizon: float) -> np.ndarray:
    if rate <= 0.0:
        return np.empty(0)
    mean = rate * horizon
    out = []
    t = 0.0
    block = max(16, int(mean + 6.0 * math.sqrt(mean) + 10))
    while True:
        gaps = g.standard_exponential(block) / rate
        cum = t + np.cumsum(gaps)
        out.append(cum[cum <= horizon])
        if cum[-1] > horizon:
            break
        t = cum[-1]
    return np.concatenate(out)


def draw_jumps(seed: int, path_index: int, jumps, horizon: float):
    """(times, sizes) of downward jumps: exponential inter-arrivals at the
    total rate, mixture component proportional to the component rates."""
    total = sum(eta for eta, _ in jumps)
    g = _generator(seed, path_index, STREAM_JUMPS)
    times = _arrival_times(g, total, horizon)
    n = len(times)
    if n == 0 or total == 0.0:
        return np.empty(0), np.empty(0)
    probs = np.array([eta / total for eta, _ in jumps])
    betas = np.array([beta for _, beta in jumps])
    comp = g.choice(len(jumps), size=n, p=probs)
    sizes = g.standard_exponential(n) / betas[comp]
    return times, sizes


def draw_observations(seed: int, path_index: int, lam: float,
                      horizon: float) -> np.ndarray:
    g = _generator(seed, path_index, STREAM_OBSERVATIONS)
    return _arrival_times(g, lam, horizon)
