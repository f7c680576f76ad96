"""Numerical certification of optimality for a solved policy.

The solved cost function is checked against everything the optimality proof
demands, turned into residuals: smooth fit at the lower barrier, convexity,
the slope bound v' >= -K_c, the generator identities per region, and the
variational inequality

    (L - q) v + lam (M v - v) + f >= 0,      M v(x) = inf_{l>=0} K_p l + v(x+l)

with the generator applied through the closed-form derivatives and adaptive
quadrature for the jump part (exact analytic tail where the cost is linear).
All failures are reported, never raised.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from .costs import CostSpec, HybridPolicy, get_bundle
from .scale import KernelSet
from .solver import PolicySolution

__all__ = ["VerificationReport", "m_operator_gap", "generator_apply",
           "full_report", "QuadratureToleranceError"]

TOL_SMOOTH_FIT = 1e-7
TOL_SLOPE = 1e-8
TOL_VI = 1e-6
TOL_REGION = 1e-6


class QuadratureToleranceError(RuntimeError):
    pass


def _policy_of(sol, ks: KernelSet) -> HybridPolicy:
    if isinstance(sol, HybridPolicy):
        return sol
    if isinstance(sol, PolicySolution):
        if sol.kind == "hybrid":
            return HybridPolicy(sol.a_star, sol.b_star)
        # pure discounted: deep lower barrier stand-in
        return HybridPolicy(sol.b_star - 16.2 / ks.phi_q_lam, sol.b_star)
    raise TypeError(f"unsupported solution type {type(sol)!r}")


def m_operator_gap(spec: CostSpec, ks: KernelSet, sol, x: float) -> float:
    """M v(x) - v(x) under convexity with slope -K_p at the upper barrier:
    lift to b* below it, do nothing above."""
    pol = _policy_of(sol, ks)
    if x >= pol.b:
        return 0.0
    bundle = get_bundle(spec, ks, pol.a, pol.b)
    return spec.K_p * (pol.b - x) + bundle.v(pol.b) - bundle.v(x)


def m_operator_gap_oracle(spec: CostSpec, ks: KernelSet, sol, x: float,
                          span: float = 60.0) -> float:
    """Direct minimisation of l -> K_p l + v(x + l); independent of the
    convexity shortcut."""
    pol = _policy_of(sol, ks)
    bundle = get_bundle(spec, ks, pol.a, pol.b)
    res = minimize_scalar(lambda l: spec.K_p * l + bundle.v(x + l),
                          bounds=(0.0, max(pol.b - x, 0.0) + span),
                          method="bounded",
                          options={"xatol": 1e-10})
    return min(float(res.fun), bundle.v(x)) - bundle.v(x)


def _drift_gamma(ks: KernelSet) -> float:
    """Drift rate matching the compensated jump integral."""
    m = ks.model
    g = m.delta
    for eta, beta in m.jumps:
        g += eta * ((beta + 1.0) * math.exp(-beta) - 1.0) / beta
    return g


def generator_apply(spec: CostSpec, ks: KernelSet, sol, x: float,
                    compensated: bool = True) -> float:
    """(L - q) v(x) for the solved policy's cost function.

    The jump integral runs by adaptive quadrature down to the point where the
    cost is exactly linear (below the lower barrier, at least 40 mean jump
    sizes out), with the remaining tail integrated in closed form.
    """
    pol = _policy_of(sol, ks)
    bundle = get_bundle(spec, ks, pol.a, pol.b)
    m = ks.model
    v, vp = bundle.v, bundle.v_prime
    vx = v(x)
    vpx = vp.one_sided(x, "+")
    if compensated and not m.is_bounded_variation:
        drift = _drift_gamma(ks)
    else:
        drift = m.delta
        compensated = False
    out = drift * vpx - ks.q * vx
    if m.sigma > 0:
        out += 0.5 * m.sigma**2 * bundle.v_second.one_sided(x, "+")

    if not m.jumps:
        return out

    min_beta = m.min_beta
    z_lin = min(-40.0 / min_beta, pol.a - x)
    z0 = min(z_lin, -1.0)

    def integrand(z):
        comp = vpx * z if (compensated and -1.0 < z < 0.0) else 0.0
        dens = sum(eta * beta * math.exp(beta * z) for eta, beta in m.jumps)
        return (v(x + z) - vx - comp) * dens

    cuts = sorted({float(b) - x for b in bundle.v.breakpoints
                   if z0 < float(b) - x < 0.0} | ({-1.0} if z0 < -1.0 else set()))
    val, err = quad(integrand, z0, 0.0, points=cuts or None,
                    limit=400, epsabs=1e-10, epsrel=1e-9)
    if err > 1e-8 * (1.0 + abs(val)):
        raise QuadratureToleranceError(
            f"jump-integral quadrature error {err:.2e} at x={x}")
    out += val

    # analytic tail: v(y) = v(a) - K_c (y - a) for y <= a, no compensator
    A = bundle.v(pol.a) + spec.K_c * pol.a - vx
    B = -spec.K_c
    for eta, beta in m.jumps:
        out += eta * math.exp(beta * z0) * (A + B * x + B * (z0 - 1.0 / beta))
    return out


def _f_tilde(spec: CostSpec, x: float) -> float:
    return spec.f(x) + spec.tilde_shift * x


@dataclass
class VerificationReport:
    smooth_fit_gap: float
    smooth_fit_gap_second: float | None
    min_slope_plus_Kc: float
    vi_residuals: list
    max_abs_residual: float
    passed: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {
            "smooth_fit_gap": self.smooth_fit_gap,
            "smooth_fit_gap_second": self.smooth_fit_gap_second,
            "min_slope_plus_Kc": self.min_slope_plus_Kc,
            "vi_residuals": self.vi_residuals,
            "max_abs_residual": self.max_abs_residual,
            "passed": self.passed,
            "all_passed": self.all_passed,
            "tolerances": self.tolerances,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def full_report(spec: CostSpec, ks: KernelSet, sol,
                grid=None) -> VerificationReport:
    """Aggregate certificate: smooth fit, slope bound, convexity, per-region
    generator identities, and the variational inequality on the grid."""
    pol = _policy_of(sol, ks)
    a, b = pol.a, pol.b
    bundle = get_bundle(spec, ks, a, b)
    v, vp = bundle.v, bundle.v_prime
    lam = ks.lam

    if grid is None:
        grid = np.linspace(a - 3.0, b + 5.0, 101)
    grid = np.asarray(grid, dtype=float)

    gap1 = abs(vp.one_sided(a, "-") - vp.one_sided(a, "+"))
    if ks.model.sigma > 0:
        v2 = bundle.v_second
        left2, right2 = v2.one_sided(a, "-"), v2.one_sided(a, "+")
        gap2 = abs(left2 - right2) / (1.0 + abs(right2))
    else:
        gap2 = None

    dense = np.linspace(grid[0], grid[-1], 1000)
    slopes = np.array([vp.one_sided(float(t), "+") for t in dense])
    min_slope = float(np.min(slopes) + spec.K_c)
    convex_ok = bool(np.all(np.diff(slopes) >= -1e-8 * (1 + np.abs(slopes[1:]))))

    records = []
    max_resid = 0.0
    vi_min = math.inf
    for t in grid:
        t = float(t)
        if min(abs(t - a), abs(t - b)) < 1e-9:
            t += 2e-9
        gen = generator_apply(spec, ks, pol, t)
        fx = spec.f(t)
        gap_formula = m_operator_gap(spec, ks, pol, t)
        if t < a:
            region = "below_a"
            resid = (gen + lam * gap_formula + fx
                     - (_f_tilde(spec, t) - _f_tilde(spec, a)))
        elif t < b:
            region = "between"
            resid = gen + fx + lam * gap_formula
        else:
            region = "above_b"
            resid = gen + fx
        vi = gen + lam * m_operator_gap_oracle(spec, ks, pol, t) + fx
        vi_min = min(vi_min, vi / (1.0 + abs(fx)))
        rel = resid / (1.0 + abs(fx))
        max_resid = max(max_resid, abs(rel))
        records.append({"x": t, "residual": rel, "region": region,
                        "vi_value": vi})

    passed = {
        "smooth_fit": gap1 <= TOL_SMOOTH_FIT,
        "slope_bound": min_slope >= -TOL_SLOPE,
        "convexity": convex_ok,
        "region_identities": max_resid <= TOL_REGION,
        "variational_inequality": vi_min >= -TOL_VI,
    }
    if gap2 is not None:
        passed["smooth_fit_second"] = gap2 <= 1e-6
    tolerances = {"smooth_fit": TOL_SMOOTH_FIT, "slope_bound": TOL_SLOPE,
                  "region_identities": TOL_REGION,
                  "variational_inequality": TOL_VI,
                  "smooth_fit_second": 1e-6}
    return VerificationReport(
        smooth_fit_gap=gap1,
        smooth_fit_gap_second=gap2,
        min_slope_plus_Kc=min_slope,
        vi_residuals=records,
        max_abs_residual=max_resid,
        passed=passed,
        tolerances=tolerances,
    )
