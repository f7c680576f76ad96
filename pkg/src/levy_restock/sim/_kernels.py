"""Path-stepping kernels.

The scalar per-path kernel is the reference implementation; it is compiled
with numba when available and the batch driver parallelises over paths.  A
vectorised pure-numpy batch (paths in lockstep over the time grid, with the
rare in-step observation events fixed up per path by the same scalar
sub-steps) serves as the fallback, selected by LEVY_RESTOCK_BACKEND=numpy.
Both consume pre-drawn randoms, so results are deterministic per
(seed, path_index) regardless of backend, threading, or batch layout.

Scheme per step of length dt: apply the full drift/diffusion increment and
all jumps landing in the step, clamp at the lower barrier (continuous
replenishment), then process Poisson observation times event-exactly: the
discount factor at an observation uses exp(-q T) at the exact arrival time,
and the running-cost accrual is trapezoidal between events.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
    from numba import njit, prange
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        def wrap(f):
            return f
        if args and callable(args[0]):
            return args[0]
        return wrap


def _f_eval(y, breaks, coefs):
    """Piecewise polynomial, half-open pieces [break, next)."""
    lo, hi = 0, breaks.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if y < breaks[mid]:
            hi = mid
        else:
            lo = mid + 1
    acc = 0.0
    for j in range(coefs.shape[1] - 1, -1, -1):
        acc = acc * y + coefs[lo, j]
    return acc


def _path_kernel(x0, a, b, delta, sigma, q, dt, n_steps,
                 normals, jump_t, jump_z, obs_t,
                 f_breaks, f_coefs,
                 record, rec_t, rec_y, rec_rc, rec_rp):
    """One controlled path; returns (holding, rc_disc, rp_disc, terminal,
    rc_cum, rp_cum, n_recorded)."""
    sqrt_dt = math.sqrt(dt)
    step_disc = math.exp(-q * dt)
    y = x0
    rc_disc = 0.0
    rp_disc = 0.0
    rc_cum = 0.0
    rp_cum = 0.0
    holding = 0.0
    # initial continuous replenishment up to the barrier (discount 1)
    rc0 = a - y
    if rc0 > 0.0:
        y = a
        rc_disc += rc0
        rc_cum += rc0
    n_rec = 0
    if record:
        rec_t[n_rec] = 0.0
        rec_y[n_rec] = y
        rec_rc[n_rec] = rc_cum
        rec_rp[n_rec] = rp_cum
        n_rec += 1
    disc = 1.0
    f_cur = _f_eval(y, f_breaks, f_coefs)
    ji = 0
    oi = 0
    n_jumps = jump_t.shape[0]
    n_obs = obs_t.shape[0]
    inf = math.inf
    next_jump = jump_t[0] if n_jumps > 0 else inf
    next_obs = obs_t[0] if n_obs > 0 else inf
    drift_dt = delta * dt
    for n in range(n_steps):
        t1 = (n + 1) * dt
        inc = drift_dt + sigma * sqrt_dt * normals[n]
        y = y + inc
        if next_jump <= t1:
            jz = 0.0
            while next_jump <= t1:
                jz += jump_z[ji]
                ji += 1
                next_jump = jump_t[ji] if ji < n_jumps else inf
            y = y - jz
        rc_inc = a - y
        if rc_inc > 0.0:
            y = a
        else:
            rc_inc = 0.0
        disc_new = disc * step_disc
        rc_disc += disc_new * rc_inc
        rc_cum += rc_inc
        f_end = _f_eval(y, f_breaks, f_coefs)
        if next_obs <= t1:
            f_prev = f_cur
            disc_prev = disc
            while next_obs <= t1:
                T = next_obs
                oi += 1
                next_obs = obs_t[oi] if oi < n_obs else inf
                eT = math.exp(-q * T)
                holding += 0.5 * (f_prev + f_end) * (disc_prev - eT) / q
                if y < b:
                    rp_inc = b - y
                    rp_disc += eT * rp_inc
                    rp_cum += rp_inc
                    y = b
                    f_end = _f_eval(y, f_breaks, f_coefs)
                f_prev = f_end
                disc_prev = eT
                if record:
                    rec_t[n_rec] = T
                    rec_y[n_rec] = y
                    rec_rc[n_rec] = rc_cum
                    rec_rp[n_rec] = rp_cum
                    n_rec += 1
            holding += 0.5 * (f_prev + f_end) * (disc_prev - disc_new) / q
        else:
            holding += 0.5 * (f_cur + f_end) * (disc - disc_new) / q
        f_cur = f_end
        disc = disc_new
    if record:
        rec_t[n_rec] = n_steps * dt
        rec_y[n_rec] = y
        rec_rc[n_rec] = rc_cum
        rec_rp[n_rec] = rp_cum
        n_rec += 1
    return holding, rc_disc, rp_disc, y, rc_cum, rp_cum, n_rec


def _batch_kernel(x0s, a, b, delta, sigma, q, dt, n_steps,
                  normals, jump_t, jump_off, jump_z, obs_t, obs_off,
                  f_breaks, f_coefs, out):
    """Batch over paths (outer, parallel) and initial levels (inner).

    out has shape (n_paths, n_x0, 6): holding, rc_disc, rp_disc, terminal,
    rc_cum, rp_cum.
    """
    dummy = np.zeros(1)
    n_paths = normals.shape[0]
    for p in prange(n_paths):
        jt = jump_t[jump_off[p]:jump_off[p + 1]]
        jz = jump_z[jump_off[p]:jump_off[p + 1]]
        ot = obs_t[obs_off[p]:obs_off[p + 1]]
        for k in range(x0s.shape[0]):
            h, rcd, rpd, term, rcc, rpc, _ = _path_kernel(
                x0s[k], a, b, delta, sigma, q, dt, n_steps,
                normals[p], jt, jz, ot, f_breaks, f_coefs,
                False, dummy, dummy, dummy, dummy)
            out[p, k, 0] = h
            out[p, k, 1] = rcd
            out[p, k, 2] = rpd
            out[p, k, 3] = term
            out[p, k, 4] = rcc
            out[p, k, 5] = rpc


# keep the interpreted scalar kernel for the numpy backend, then rebind the
# module globals so the jitted batch driver compiles against jitted callees
_path_kernel_py = _path_kernel
if HAVE_NUMBA:
    prange = numba.prange
    _f_eval = njit(cache=True, inline="always")(_f_eval)
    _path_kernel = njit(cache=True)(_path_kernel)
    _batch_kernel_jit = njit(cache=True, parallel=True)(_batch_kernel)
else:  # pragma: no cover - exercised only without numba
    _batch_kernel_jit = _batch_kernel


def backend_name() -> str:
    env = os.environ.get("LEVY_RESTOCK_BACKEND", "auto").lower()
    if env in ("", "auto"):
        return "numba" if HAVE_NUMBA else "numpy"
    if env == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("LEVY_RESTOCK_BACKEND=numba but numba is not "
                               "importable")
        return "numba"
    if env == "numpy":
        return "numpy"
    raise ValueError(f"unknown LEVY_RESTOCK_BACKEND {env!r}")


def run_path(*args):
    if backend_name() == "numba" and HAVE_NUMBA:
        return _path_kernel(*args)
    return _path_kernel_py(*args)


def _f_eval_vec(y, breaks, coefs):
    idx = np.searchsorted(breaks, y, side="right")
    acc = np.zeros_like(y)
    for j in range(coefs.shape[1] - 1, -1, -1):
        acc = acc * y + coefs[idx, j]
    return acc


def _batch_numpy(x0s, a, b, delta, sigma, q, dt, n_steps,
                 normals, jump_t, jump_off, jump_z, obs_t, obs_off,
                 f_breaks, f_coefs, out):
    """Lockstep vectorised batch mirroring the scalar kernel's float ops."""
    n_paths = normals.shape[0]
    grid = (np.arange(1, n_steps + 1)) * dt
    # bucket jumps by step: step n handles (n dt, (n+1) dt]
    jump_sums = np.zeros((n_paths, n_steps))
    for p in range(n_paths):
        jt = jump_t[jump_off[p]:jump_off[p + 1]]
        jz = jump_z[jump_off[p]:jump_off[p + 1]]
        if len(jt):
            np.add.at(jump_sums[p], np.searchsorted(grid, jt, side="left"), jz)
    # observation events grouped by step
    ev_step, ev_path, ev_time = [], [], []
    for p in range(n_paths):
        ot = obs_t[obs_off[p]:obs_off[p + 1]]
        if len(ot):
            ev_step.append(np.searchsorted(grid, ot, side="left"))
            ev_path.append(np.full(len(ot), p))
            ev_time.append(ot)
    if ev_step:
        ev_step = np.concatenate(ev_step)
        ev_path = np.concatenate(ev_path)
        ev_time = np.concatenate(ev_time)
        order = np.lexsort((ev_time, ev_path, ev_step))
        ev_step, ev_path, ev_time = ev_step[order], ev_path[order], ev_time[order]
    else:
        ev_step = np.empty(0, dtype=int)
        ev_path = np.empty(0, dtype=int)
        ev_time = np.empty(0)
    ev_ptr = 0
    sqrt_dt = math.sqrt(dt)
    step_disc = math.exp(-q * dt)

    for k in range(x0s.shape[0]):
        y = np.full(n_paths, float(x0s[k]))
        rc_disc = np.zeros(n_paths)
        rp_disc = np.zeros(n_paths)
        rc_cum = np.zeros(n_paths)
        rp_cum = np.zeros(n_paths)
        holding = np.zeros(n_paths)
        rc0 = np.maximum(a - y, 0.0)
        y = np.maximum(y, a)
        rc_disc += rc0
        rc_cum += rc0
        disc = np.ones(n_paths)
        f_cur = _f_eval_vec(y, f_breaks, f_coefs)
        ev_ptr = 0
        for n in range(n_steps):
            t1 = (n + 1) * dt
            inc = delta * dt + sigma * sqrt_dt * normals[:, n]
            y = y + inc
            y = y - jump_sums[:, n]
            rc_inc = np.maximum(a - y, 0.0)
            y = np.maximum(y, a)
            disc_new = disc * step_disc
            rc_disc += disc_new * rc_inc
            rc_cum += rc_inc
            f_end = _f_eval_vec(y, f_breaks, f_coefs)
            f_prev = f_cur
            disc_prev = disc
            # event fix-ups for the few paths observed in this step
            while ev_ptr < len(ev_step) and ev_step[ev_ptr] == n:
                p = ev_path[ev_ptr]
                T = ev_time[ev_ptr]
                ev_ptr += 1
                eT = math.exp(-q * T)
                holding[p] += 0.5 * (f_prev[p] + f_end[p]) * (disc_prev[p] - eT) / q
                if y[p] < b:
                    rp_inc = b - y[p]
                    rp_disc[p] += eT * rp_inc
                    rp_cum[p] += rp_inc
                    y[p] = b
                    f_end[p] = _f_eval(y[p], f_breaks, f_coefs)
                f_prev = f_prev.copy() if f_prev is f_cur else f_prev
                disc_prev = disc_prev.copy() if disc_prev is disc else disc_prev
                f_prev[p] = f_end[p]
                disc_prev[p] = eT
            holding += 0.5 * (f_prev + f_end) * (disc_prev - disc_new) / q
            f_cur = f_end
            disc = disc_new
        out[:, k, 0] = holding
        out[:, k, 1] = rc_disc
        out[:, k, 2] = rp_disc
        out[:, k, 3] = y
        out[:, k, 4] = rc_cum
        out[:, k, 5] = rp_cum


def run_batch(*args):
    if backend_name() == "numba":
        _configure_threads()
        return _batch_kernel_jit(*args)
    return _batch_numpy(*args)


def _configure_threads():
    cap = os.environ.get("LEVY_RESTOCK_THREADS")
    if cap:
        try:
            numba.set_num_threads(max(1, min(int(cap),
                                             numba.config.NUMBA_NUM_THREADS)))
        except (ValueError, RuntimeError):
            pass
