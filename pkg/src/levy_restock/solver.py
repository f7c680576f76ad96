"""Barrier solver: thresholds, inner/outer bisection, and degenerate policies.

The optimal pair (a*, b*) is the simultaneous zero of Gamma and gamma.  Since
gamma is proportional to -dGamma/db, the search is a tangency hunt: for each
lower barrier ``a`` the inner solve finds the unique ``b(a)`` maximising
``Gamma(a, .)`` (where gamma vanishes), and the outer bisection drives
``GammaBar(a) = Gamma(a, b(a))`` to zero.  GammaBar is strictly increasing on
the proven bracket, so plain bisection is enough and no derivatives are used.

Degenerate baselines:

* pure regular (continuous replenishment only, unit cost C): barrier
  ``a_dd = inf{a : int_0^inf e^{-phi_q y}(f'(y+a) + qC) dy >= 0}``, value
  obtained as the b -> a limit of the hybrid cost;
* pure discounted (Poisson-timed replenishment only): barrier from the
  marginal-cost condition at the upper barrier with the lower barrier pushed
  so deep that its influence, decaying at rate phi(q+lam), is below 1e-12.
  That evaluation is assembled in a compensated form: the naive formula
  subtracts terms of size exp(phi(q+lam) L) and loses every digit, so the
  exponentially growing component (proportional to the Gamma_2 tail) is
  cancelled symbolically and only well-scaled remainders are evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .costs import (CostSpec, HybridPolicy, get_bundle, get_compensated,
                    value_total)
from .polyexp import weighted_tail_integral
from .scale import KernelSet

__all__ = [
    "PolicySolution",
    "SolverError",
    "BracketFailure",
    "NoCrossing",
    "NoFiniteThreshold",
    "gamma_one",
    "gamma_two",
    "thresholds",
    "b_of_a",
    "solve_barriers",
    "pure_discounted_barrier",
    "pure_discounted_value",
    "pure_regular_barrier",
    "pure_regular_value",
]


class SolverError(RuntimeError):
    pass


class BracketFailure(SolverError):
    """A root bracket could not be established; carries diagnostics."""

    def __init__(self, msg: str, **diag):
        super().__init__(msg + (f" [{diag}]" if diag else ""))
        self.diagnostics = diag


class NoCrossing(SolverError):
    """The inner solve has no root (lower barrier not below a_underline_2)."""


class NoFiniteThreshold(SolverError):
    """The slope assumption fails: no finite threshold exists."""


@dataclass(frozen=True)
class PolicySolution:
    kind: str                       # "hybrid" | "pure_discounted"
    b_star: float
    a_star: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a_star": self.a_star,
                "b_star": self.b_star, "diagnostics": dict(self.diagnostics)}


# ---------------------------------------------------------------------------
# scalar threshold functions
# ---------------------------------------------------------------------------

def gamma_one(spec: CostSpec, ks: KernelSet, a: float) -> float:
    """Diagonal limit Gamma(a, a+)."""
    return (weighted_tail_integral(spec.f_tilde_prime_pw, ks.phi_q, a)
            + ks.lam / ks.phi_q * (spec.K_p - spec.K_c))


def gamma_two(spec: CostSpec, ks: KernelSet, a: float) -> float:
    """Normalised b -> inf limit of Gamma(a, .)."""
    return weighted_tail_integral(spec.f_tilde_prime_pw, ks.phi_q_lam, a)


def _tail_only(spec: CostSpec, ks: KernelSet, a: float) -> float:
    return weighted_tail_integral(spec.f_tilde_prime_pw, ks.phi_q, a)


def _increasing_root(g, start: float, name: str, tol: float = 1e-10) -> float:
    """Leftward bracket growth + bisection for a strictly increasing g."""
    hi = start
    ghi = g(hi)
    grow = 0
    while ghi < 0:
        hi += max(1.0, abs(hi))
        ghi = g(hi)
        grow += 1
        if grow > 80:
            raise BracketFailure(f"no upper bracket for {name}")
    lo = hi - max(1.0, 0.1 * abs(hi))
    glo = g(lo)
    grow = 0
    while glo >= 0:
        lo -= max(1.0, abs(lo))
        glo = g(lo)
        grow += 1
        if grow > 80:
            raise BracketFailure(f"no lower bracket for {name}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) >= 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def thresholds(spec: CostSpec, ks: KernelSet) -> dict:
    """a_underline_1/2, a_dagger, and the slope thresholds of f."""
    if not spec.slope1_holds:
        raise NoFiniteThreshold(
            "the perturbed marginal holding cost never changes sign, so the "
            "hybrid thresholds do not exist; use the pure discounted branch")
    a_bar = spec.a_bar()
    a_bar_bar = spec.a_bar_bar()
    a1 = _increasing_root(lambda a: gamma_one(spec, ks, a), a_bar_bar,
                          "a_underline_1")
    a2 = _increasing_root(lambda a: gamma_two(spec, ks, a), a_bar,
                          "a_underline_2")
    a_dag = _increasing_root(lambda a: _tail_only(spec, ks, a), a_bar,
                             "a_dagger")
    return {"a_underline_1": a1, "a_underline_2": a2, "a_dagger": a_dag,
            "a_bar": a_bar, "a_bar_bar": a_bar_bar}


# ---------------------------------------------------------------------------
# inner and outer solves
# ---------------------------------------------------------------------------

class _LowerBarrierContext:
    """Per-a closed forms reused across the inner bisection over b."""

    def __init__(self, spec: CostSpec, ks: KernelSet, a: float):
        self.spec, self.ks, self.a = spec, ks, a
        self.rho = ks.rho(a, spec.f_tilde_prime_pw, boosted=True)
        self.tail = weighted_tail_integral(spec.f_tilde_prime_pw, ks.phi_q, a)
        self._mid = self.rho.multiply_exp(-ks.phi_q).antiderivative(a)
        self._mid_scale = ks.lam * math.exp(ks.phi_q * a)

    def gamma_small(self, b: float) -> float:
        return -self.rho(b) + self.spec.K_p - self.spec.K_c

    def gamma_big(self, b: float) -> float:
        ks, spec = self.ks, self.spec
        return (self.tail + self._mid_scale * self._mid(b)
                + ks.lam / ks.phi_q * math.exp(-ks.phi_q * (b - self.a))
                * (spec.K_p - spec.K_c))

    def b_of_a(self, cap_gap: float | None = None) -> float:
        """Unique b with rho_a(b; f~') = K_p - K_c (gamma = 0)."""
        spec, ks, a = self.spec, self.ks, self.a
        target = spec.K_p - spec.K_c
        cap = cap_gap if cap_gap is not None else 1e4 / ks.phi_q_lam
        gap = 1.0
        while self.rho(a + gap) > target:
            gap *= 2.0
            if gap > cap:
                raise NoCrossing(
                    f"rho never crosses K_p - K_c below gap cap {cap:.3g}; "
                    "the lower barrier is not below a_underline_2")
        lo, hi = a + gap / 2.0 if gap > 1.0 else a, a + gap
        tol = 1e-10 * (spec.K_c - spec.K_p)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            r = self.rho(mid)
            if abs(r - target) <= tol and hi - lo <= 1e-9:
                return mid
            if r > target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-13 * max(1.0, abs(mid)):
                return mid
        return 0.5 * (lo + hi)


def b_of_a(spec: CostSpec, ks: KernelSet, a: float) -> float:
    return _LowerBarrierContext(spec, ks, a).b_of_a()


def solve_barriers(spec: CostSpec, ks: KernelSet,
                   tol_residual: float = 1e-8,
                   bracket_cap: float | None = None) -> PolicySolution:
    """Optimal policy: hybrid pair when the slope assumption holds, the pure
    discounted barrier otherwise."""
    if not spec.slope1_holds:
        if not spec.slope1_upper_ok:
            raise BracketFailure(
                "perturbed marginal cost stays negative everywhere: no "
                "finite replenishment barrier exists",
                slope_plus=spec._slope_plus)
        b_dd = pure_discounted_barrier(spec, ks)
        return PolicySolution(
            kind="pure_discounted", b_star=b_dd,
            diagnostics={"case_tag": "PURE_DISCOUNTED",
                         "reason": "marginal holding cost bounded below by "
                                   "-(q K_c + lam (K_c - K_p))"})

    th = thresholds(spec, ks)
    a1, a2, a_dag = th["a_underline_1"], th["a_underline_2"], th["a_dagger"]
    case_tag = "A1_LE_A2" if a1 <= a2 else "A2_LT_A1"
    right_end = min(a1, a2)
    scale = ks.lam * (spec.K_c - spec.K_p) / ks.phi_q

    def gamma_bar(a: float) -> tuple[float, float]:
        ctx = _LowerBarrierContext(spec, ks, a)
        b = ctx.b_of_a(cap_gap=bracket_cap)
        return ctx.gamma_big(b), b

    diag_base = {
        "residual_scale": scale,
        "case_tag": case_tag,
        "a_underline_1": a1,
        "a_underline_2": a2,
        "a_dagger": a_dag,
        "a_bar": th["a_bar"],
        "a_bar_bar": th["a_bar_bar"],
    }
    eps_l = 1e-9 * max(1.0, abs(a_dag))
    eps_r = 1e-9 * max(1.0, abs(right_end))
    lo, hi = a_dag + eps_l, right_end - eps_r
    g_lo, _ = gamma_bar(lo)
    g_hi, b_hi = gamma_bar(hi)
    if g_lo >= 0:
        raise BracketFailure(
            "GammaBar is nonnegative at the left bracket end",
            gamma_bar_left=g_lo, **diag_base)
    if g_hi <= 0:
        if case_tag == "A2_LT_A1":
            # GammaBar is still negative at the closest representable point
            # below a_underline_2: the root lives in an exponentially thin
            # layer there (the growing rho component has coefficient
            # Gamma_2(a) -> 0).  Eliminating the layer offset between the two
            # optimality conditions leaves one well-conditioned equation in b.
            diag = dict(diag_base, iterations=0)
            return _solve_boundary_layer(spec, ks, th, diag, tol_residual)
        raise BracketFailure(
            "GammaBar does not change sign over the proven bracket",
            gamma_bar_left=g_lo, gamma_bar_right=g_hi, **diag_base)

    iters = 0
    a_star, b_star, g_star = hi, b_hi, g_hi
    for _ in range(200):
        iters += 1
        mid = 0.5 * (lo + hi)
        g_mid, b_mid = gamma_bar(mid)
        a_star, b_star, g_star = mid, b_mid, g_mid
        if g_mid > 0:
            hi = mid
        else:
            lo = mid
        if abs(g_mid) <= tol_residual * scale and hi - lo <= 1e-11 * max(1.0, abs(mid)):
            break
        if hi - lo <= 1e-13 * max(1.0, abs(mid)):
            break

    diag = dict(diag_base, iterations=iters)
    bundle = get_bundle(spec, ks, a_star, b_star)
    if abs(bundle.gamma_big) <= tol_residual * scale and \
       abs(bundle.gamma_small) <= tol_residual * scale:
        diag["gamma_big_residual"] = bundle.gamma_big
        diag["gamma_small_residual"] = bundle.gamma_small
        return PolicySolution(kind="hybrid", a_star=a_star, b_star=b_star,
                              diagnostics=diag)
    if case_tag == "A2_LT_A1":
        return _solve_boundary_layer(spec, ks, th, diag, tol_residual)
    raise BracketFailure("candidate residuals above tolerance", **diag)


def _solve_boundary_layer(spec: CostSpec, ks: KernelSet, th: dict,
                          diag: dict, tol_residual: float) -> PolicySolution:
    comp = get_compensated(spec, ks)
    a2 = th["a_underline_2"]
    jump = spec.K_c - spec.K_p
    ratio = comp.k_pos / comp.c_pos       # = lam / (phi_ql - phi_q)

    def F(b: float) -> float:
        return (comp.gamma_tilde_reg(a2, b)
                - ratio * (comp.rho_clean(a2, b) + jump))

    hi = a2 + 1.0
    grow = 0
    while F(hi) <= 0:
        hi = a2 + 2.0 * (hi - a2)
        grow += 1
        if grow > 60:
            raise BracketFailure("no upper bracket in the boundary-layer "
                                 "solve", **diag)
    lo = a2 + 0.5 * (hi - a2) if hi - a2 > 1.0 else a2 + 1e-9
    while F(lo) >= 0:
        lo = a2 + 0.5 * (lo - a2)
        if lo - a2 < 1e-12:
            raise BracketFailure("no lower bracket in the boundary-layer "
                                 "solve", **diag)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if F(mid) >= 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * max(1.0, abs(mid)):
            break
    b_star = 0.5 * (lo + hi)
    D = b_star - a2

    # offset below a_underline_2 implied by the tangency (usually denormal)
    h = 1e-6
    slope2 = (gamma_two(spec, ks, a2 + h) - gamma_two(spec, ks, a2 - h)) / (2 * h)
    gt_reg = comp.gamma_tilde_reg(a2, b_star)
    log_delta = (math.log(max(abs(gt_reg), 1e-300))
                 - math.log(comp.k_pos * slope2) - ks.phi_q_lam * D)
    delta = math.exp(log_delta) if log_delta > -700 else 0.0
    a_star = a2 - delta

    # compensated residuals at the solved pair
    X = -math.exp(ks.phi_q_lam * D) * delta * slope2
    gamma_big_res = math.exp(-ks.phi_q * D) * (gt_reg + comp.k_pos * X)
    gamma_small_res = (spec.K_p - spec.K_c
                       - (comp.c_pos * X + comp.rho_clean(a2, b_star)))
    scale = diag["residual_scale"]
    diag.update({
        "gamma_big_residual": gamma_big_res,
        "gamma_small_residual": gamma_small_res,
        "boundary_layer": True,
        "layer_offset": delta,
    })
    if abs(gamma_big_res) > tol_residual * scale or \
       abs(gamma_small_res) > tol_residual * scale:
        raise BracketFailure("boundary-layer residuals above tolerance",
                             **diag)
    return PolicySolution(kind="hybrid", a_star=a_star, b_star=b_star,
                          diagnostics=diag)


# ---------------------------------------------------------------------------
# pure regular baseline
# ---------------------------------------------------------------------------

def pure_regular_barrier(spec: CostSpec, ks: KernelSet, C: float) -> float:
    """Barrier of the continuous-only policy with unit cost C."""
    g = lambda a: weighted_tail_integral(
        spec.f_prime.add_const(spec.q * C), ks.phi_q, a)
    return _increasing_root(g, 0.0, "pure_regular_barrier")


def pure_regular_value(spec: CostSpec, ks: KernelSet, a: float, x: float,
                       eps: float = 1e-4) -> float:
    """b -> a limit of the hybrid cost, Richardson-extrapolated in eps."""
    v1 = value_total(spec, ks, HybridPolicy(a, a + eps), x)
    v2 = value_total(spec, ks, HybridPolicy(a, a + eps / 2), x)
    if abs(v1 - v2) > 1e-4 * max(1.0, abs(v2)):
        raise SolverError(
            f"pure-regular limit not converged: |v(eps) - v(eps/2)| = "
            f"{abs(v1 - v2):.3g}")
    return 2 * v2 - v1


# ---------------------------------------------------------------------------
# pure discounted baseline (compensated large-gap evaluation)
# ---------------------------------------------------------------------------

def _default_gap(ks: KernelSet) -> float:
    # influence of the lower barrier decays at rate phi(q + lam); pick the
    # gap so the leftover weight is under 1e-12
    return 27.7 / ks.phi_q_lam


def pure_discounted_barrier(spec: CostSpec, ks: KernelSet,
                            gap: float | None = None) -> float:
    """Barrier b_dd of the Poisson-timed-only policy: marginal cost at the
    barrier equals -K_p.  Solved with the lower barrier at distance L below,
    then re-solved with L + 6/phi(q+lam) as an insensitivity check."""
    if spec._slope_plus + spec.q * spec.K_p <= 0:
        raise BracketFailure(
            "marginal holding cost never exceeds -q K_p: the discounted-mode "
            "first-order condition has no root",
            slope_plus=spec._slope_plus)
    ev = get_compensated(spec, ks)
    L = gap if gap is not None else _default_gap(ks)

    def solve(L_: float) -> float:
        g = lambda b: ev.marginal_gap_at_b(b, L_)
        b0 = spec.a_bar_bar()
        if not math.isfinite(b0):
            b0 = 0.0
        hi = b0
        grow = 0
        while g(hi) <= 0:
            hi += max(1.0, abs(hi))
            grow += 1
            if grow > 80:
                raise BracketFailure("no upper bracket for the discounted "
                                     "barrier")
        lo = hi - max(1.0, 0.2 * abs(hi))
        grow = 0
        while g(lo) >= 0:
            lo -= max(1.0, abs(lo))
            grow += 1
            if grow > 80:
                raise BracketFailure("no lower bracket for the discounted "
                                     "barrier")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if g(mid) >= 0:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 1e-11 * max(1.0, abs(mid)):
                break
        return 0.5 * (lo + hi)

    b1 = solve(L)
    b2 = solve(L + 6.0 / ks.phi_q_lam)
    if abs(b1 - b2) >= 1e-7:
        raise SolverError(
            f"discounted barrier not converged in the gap depth: "
            f"|b(L) - b(L')| = {abs(b1 - b2):.3g}")
    return b2


def pure_discounted_value(spec: CostSpec, ks: KernelSet, b: float,
                          x: float) -> float:
    """Cost of the Poisson-timed-only policy with barrier b.

    Evaluated as the hybrid cost with the lower barrier 16.2/phi(q+lam)
    below b: the truncation bias is ~1e-7 while the conditioning of the
    plain closed form stays under control (the deeper the lower barrier,
    the larger the cancelling terms grow).
    """
    L_v = 16.2 / ks.phi_q_lam
    return value_total(spec, ks, HybridPolicy(b - L_v, b), x)
