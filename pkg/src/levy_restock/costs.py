"""Cost specification and closed-form policy cost functionals.

A hybrid barrier policy reflects the inventory at a lower barrier ``a``
(continuous replenishment, unit cost K_c) and lifts it to an upper barrier
``b`` at Poisson arrival times whenever it sits below ``b`` (discounted
replenishment, unit cost K_p < K_c).  For a convex piecewise-polynomial
holding cost every discounted functional of the controlled process is an
exact poly-exp expression; this module assembles them.

The central scalar functions are

    Gamma(a, b) = tail(f~', phi_q; a)
                  + lam * int_0^{b-a} e^{-phi_q y} rho_a(y + a; f~') dy
                  + (lam / phi_q) e^{-phi_q (b-a)} (K_p - K_c)
    gamma(a, b) = -rho_a(b; f~') + K_p - K_c

with ``f~' = f' + q K_c + lam (K_c - K_p)`` the perturbed marginal holding
cost and ``rho`` the running convolution against the (q+lam)-scale function;
their simultaneous zero characterises the optimal pair.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import psi_derivative
from .polyexp import (
    PiecewisePolyExp,
    PolyExpFunction,
    weighted_tail_integral,
)
from .scale import KernelSet

__all__ = [
    "CostSpec",
    "HybridPolicy",
    "UnsupportedOrderError",
    "f_tilde_prime",
    "gamma_big",
    "gamma_small",
    "value_total",
    "value_holding",
    "value_replenish",
    "value_derivative",
    "value_second_derivative",
    "value_fprime",
    "value_fprime_at_a",
    "value_fprime_at_b",
    "value_rp_stream",
    "value_rc_stream",
]

_spec_counter = itertools.count()


class UnsupportedOrderError(ValueError):
    """Second derivative requested for a bounded-variation model."""


class _CompensatedForms:
    """Closed forms with the exp(phi(q+lam) (b-a))-growing component split
    off symbolically.

    The running convolution rho splits as

        rho_a(b) = c_pos * e^{phi_ql (b-a)} * Gamma_2(a) + rho_clean(a, b)

    and the tilted GammaTilde = e^{phi_q (b-a)} Gamma splits likewise with
    coefficient k_pos, where Gamma_2 is the boosted-rate tail transform of
    the perturbed marginal cost.  Near the zero of Gamma_2 and for deep
    lower barriers the growing parts carry enormous cancellation, so every
    consumer works with the clean remainders plus the growing coefficient
    handled exactly."""

    def __init__(self, spec: "CostSpec", ks: KernelSet):
        self.spec, self.ks = spec, ks
        q, lam = ks.q, ks.lam
        phi_q, phi_ql = ks.phi_q, ks.phi_q_lam
        roots = ks.boosted.roots
        self.c_pos = 1.0 / psi_derivative(ks.model, phi_ql)
        self.neg = [(r, 1.0 / psi_derivative(ks.model, r))
                    for r in roots.neg_roots]
        # Theta(x) = sum_i [lam c_i/(r_i - phi_q)] e^{(r_i - phi_q) x} + C0
        self.C0 = 1.0 - lam * (
            self.c_pos / (phi_ql - phi_q)
            + sum(c / (r - phi_q) for r, c in self.neg))
        # e^{-phi_q x} Z_{q+lam}(x) = sum_i [(q+lam) c_i / r_i] e^{(r_i-phi_q)x}
        #                             + N0 e^{-phi_q x}
        self.N0 = 1.0 - (q + lam) * (
            self.c_pos / phi_ql + sum(c / r for r, c in self.neg))
        self.E_inf = (q + lam) * (phi_ql - phi_q) / (lam * phi_ql)
        self.k_pos = lam * self.c_pos / (phi_ql - phi_q)
        self.m_pos = lam * self.c_pos * phi_ql / (phi_ql - phi_q)

    def theta(self, L: float) -> float:
        phi_q = self.ks.phi_q
        return self.C0 + self.k_pos * math.exp(
            (self.ks.phi_q_lam - phi_q) * L) + sum(
            self.ks.lam * c / (r - phi_q) * math.exp((r - phi_q) * L)
            for r, c in self.neg)

    def delta_E(self, L: float) -> float:
        """E(L) - E_inf with the leading coefficient cancelled exactly,
        E(L) = e^{-phi_q L} Z_{q+lam}(L) / Theta(L)."""
        q, lam, phi_q = self.ks.q, self.ks.lam, self.ks.phi_q
        num = (self.N0 * math.exp(-phi_q * L) - self.E_inf * self.C0
               + sum(c * ((q + lam) / r - self.E_inf * lam / (r - phi_q))
                     * math.exp((r - phi_q) * L) for r, c in self.neg))
        return num / self.theta(L)

    def _seg_integral(self, kernel_terms, a: float, b: float) -> float:
        """integral_a^b f~'(y) * sum_j coef_j e^{r_j (b - y)} dy."""
        ftp = self.spec.f_tilde_prime_pw
        total = 0.0
        for coef, r in kernel_terms:
            total += coef * math.exp(r * b) * ftp.multiply_exp(-r).integrate(a, b)
        return total

    def gamma_two(self, a: float) -> float:
        return weighted_tail_integral(self.spec.f_tilde_prime_pw,
                                      self.ks.phi_q_lam, a)

    def rho_clean(self, a: float, b: float) -> float:
        """rho_a(b; f~') minus its growing component c_pos e^{..} Gamma_2(a)."""
        T2b = weighted_tail_integral(self.spec.f_tilde_prime_pw,
                                     self.ks.phi_q_lam, b)
        rho_neg = self._seg_integral([(c, r) for r, c in self.neg], a, b)
        return -self.c_pos * T2b + rho_neg

    def gamma_tilde_reg(self, a: float, b: float) -> float:
        """e^{phi_q (b-a)} Gamma(a, b) minus its growing component
        k_pos e^{phi_ql (b-a)} Gamma_2(a)."""
        spec, ks = self.spec, self.ks
        lam, phi_q = ks.lam, ks.phi_q
        ftp = spec.f_tilde_prime_pw
        T1b = weighted_tail_integral(ftp, phi_q, b)
        T2b = weighted_tail_integral(ftp, ks.phi_q_lam, b)
        z2_minus_terms = ([(lam * c / (r - phi_q), r) for r, c in self.neg]
                          + [(self.C0, phi_q)])
        I_minus = self._seg_integral(z2_minus_terms, a, b)
        return (I_minus + T1b + lam / phi_q * (spec.K_p - spec.K_c)
                - self.k_pos * T2b)

    def gamma_small(self, a: float, b: float) -> float:
        X = math.exp(self.ks.phi_q_lam * (b - a)) * self.gamma_two(a)
        return (self.spec.K_p - self.spec.K_c
                - (self.c_pos * X + self.rho_clean(a, b)))

    def gamma_big(self, a: float, b: float) -> float:
        X = math.exp(self.ks.phi_q_lam * (b - a)) * self.gamma_two(a)
        return math.exp(-self.ks.phi_q * (b - a)) * (
            self.gamma_tilde_reg(a, b) + self.k_pos * X)

    def theta_minus(self, L: float) -> float:
        """Theta(L) without its growing component k_pos e^{(phi_ql-phi_q)L}."""
        phi_q = self.ks.phi_q
        return self.C0 + sum(
            self.ks.lam * c / (r - phi_q) * math.exp((r - phi_q) * L)
            for r, c in self.neg)

    def marginal_gap_at_b(self, b: float, L: float) -> float:
        """v_{b-L, b}^{f'}(b) + K_p, compensated."""
        spec, ks = self.spec, self.ks
        q, lam, phi_q, phi_ql = ks.q, ks.lam, ks.phi_q, ks.phi_q_lam
        a = b - L
        X = math.exp(phi_ql * L) * self.gamma_two(a)
        gamma_reg = (spec.K_p - spec.K_c) - self.rho_clean(a, b)
        gt_reg = self.gamma_tilde_reg(a, b)
        dE = self.delta_E(L)
        E = self.E_inf + dE
        return (E * (phi_q * gt_reg - lam * gamma_reg) / q
                + (lam + q) / q * gamma_reg
                + self.m_pos / q * X * dE)


def get_compensated(spec: "CostSpec", ks: KernelSet) -> _CompensatedForms:
    key = ("compensated", spec.token)
    hit = ks._cache.get(key)
    if hit is None:
        hit = _CompensatedForms(spec, ks)
        ks._cache[key] = hit
    return hit


def _piecewise_above(expr: PolyExpFunction, below: PolyExpFunction) -> PiecewisePolyExp:
    return PiecewisePolyExp(np.array([0.0]), [below, expr])


def get_clean_boosted(ks: KernelSet, comp: _CompensatedForms) -> dict:
    """Boosted scale family with the growing exponential channel removed.

    On u >= 0 (the only region the kernel convolutions and the gap scalars
    touch):

        W      = W_minus                + c_pos * chi,   chi(u) = e^{phi_ql u}
        W_bar  = (Wb_minus - c/phi)     + (c/phi) chi
        Z      = (Z0 + ql Wb_minus)     + (ql c/phi) chi
        Z_bar  = int_0^u Z_clean        + (ql c/phi^2) chi   [chi part rebased]

    so every clean object has negative rates plus polynomials and keeps
    coefficients of natural size however deep the lower barrier sits."""
    key = "clean_boosted"
    hit = ks._cache.get(key)
    if hit is not None:
        return hit
    q, lam = ks.q, ks.lam
    ql = q + lam
    phi_ql = ks.phi_q_lam
    c = comp.c_pos
    w_neg_fn = PolyExpFunction.make([((ci,), r) for r, ci in comp.neg])
    zero = PolyExpFunction.zero()
    w_neg = _piecewise_above(w_neg_fn, zero)
    wbar_neg_expr = w_neg.antiderivative(0.0).piece_at(1.0)
    wbar_clean = _piecewise_above(
        wbar_neg_expr + PolyExpFunction.const(-c / phi_ql), zero)
    z_clean = _piecewise_above(
        wbar_neg_expr.scale(ql) + PolyExpFunction.const(1.0 - ql * c / phi_ql),
        PolyExpFunction.const(1.0))
    zbar_clean = z_clean.antiderivative(0.0)
    # rebase the chi part of Z_bar to a pure exponential: absorb its -1
    zbar_clean = zbar_clean + PiecewisePolyExp(
        np.array([0.0]), [zero, PolyExpFunction.const(-ql * c / phi_ql**2)])
    hit = {"w_fn": w_neg_fn, "w": w_neg, "w_bar": wbar_clean,
           "z": z_clean, "z_bar": zbar_clean,
           # chi coefficients of W, W_bar, Z, Z_bar
           "chi": {"w": c, "w_bar": c / phi_ql, "z": ql * c / phi_ql,
                   "z_bar": ql * c / phi_ql**2}}
    ks._cache[key] = hit
    return hit


def _pieces_to_polyexp(pieces) -> PiecewisePolyExp:
    """pieces: iterable of (from, coeffs), first 'from' may be None/-inf."""
    starts, polys = [], []
    for start, coeffs in pieces:
        starts.append(-math.inf if start is None else float(start))
        polys.append(PolyExpFunction.poly(coeffs))
    order = np.argsort(starts)
    starts = [starts[i] for i in order]
    polys = [polys[i] for i in order]
    if starts[0] != -math.inf:
        raise ValueError("first holding-cost piece must start at -inf "
                         "(use null / -inf for 'from')")
    bps = np.asarray(starts[1:])
    return PiecewisePolyExp(bps, polys) if len(bps) else \
        PiecewisePolyExp(np.empty(0), polys)


def _poly_limit(p: PolyExpFunction, sign: int) -> float:
    """Limit of a rate-0 polynomial piece at +/- infinity."""
    coeffs = np.zeros(1)
    for c, r in p.terms:
        if r != 0.0:
            raise ValueError("holding cost must be polynomial (rate 0)")
        coeffs = np.polynomial.polynomial.polyadd(coeffs, np.asarray(c))
    deg = len(coeffs) - 1
    while deg > 0 and coeffs[deg] == 0.0:
        deg -= 1
    if deg == 0:
        return float(coeffs[0])
    lead = coeffs[deg]
    if sign > 0:
        return math.inf if lead > 0 else -math.inf
    return math.inf if (lead > 0) == (deg % 2 == 0) else -math.inf


class CostSpec:
    """Discount rate, Poisson rate, unit costs, and convex holding cost."""

    def __init__(self, q: float, lam: float, K_c: float, K_p: float, f_pieces):
        if q <= 0:
            raise ValueError("discount rate q must be positive")
        if lam <= 0:
            raise ValueError("arrival rate lam must be positive")
        if not K_c > K_p:
            raise ValueError(
                "K_c must exceed K_p: a discounted price at or above the "
                "regular price makes the Poisson-timed mode worthless and "
                "the model degenerates to continuous replenishment only")
        self.q = float(q)
        self.lam = float(lam)
        self.K_c = float(K_c)
        self.K_p = float(K_p)
        self.f = _pieces_to_polyexp(f_pieces)
        self.f_prime = self.f.derivative()
        self._validate_f()
        self.tilde_shift = q * K_c + lam * (K_c - K_p)
        self.f_tilde_prime_pw = self.f_prime.add_const(self.tilde_shift)
        # slope limits drive the existence branch: the perturbed marginal cost
        # must be negative somewhere (otherwise continuous replenishment is
        # never used and the pure discounted policy takes over) and
        # nonnegative eventually (otherwise no finite barrier exists)
        self._slope_plus = _poly_limit(self.f_prime.pieces[-1], +1)
        self._slope_minus = _poly_limit(self.f_prime.pieces[0], -1)
        self.slope1_upper_ok = self._eventually_nonneg()
        self.slope1_lower_ok = self._somewhere_negative()
        self.slope1_holds = self.slope1_upper_ok and self.slope1_lower_ok
        self.slope2_holds = self._slope_plus + q * K_p > 0
        self.token = next(_spec_counter)

    # -- validation ----------------------------------------------------------
    def _validate_f(self):
        bp = self.f.breakpoints
        for x in bp:
            left = self.f.one_sided(float(x), "-")
            right = self.f.one_sided(float(x), "+")
            if abs(left - right) > 1e-9 * max(1.0, abs(left), abs(right)):
                raise ValueError(f"holding cost discontinuous at {x}")
            dl = self.f_prime.one_sided(float(x), "-")
            dr = self.f_prime.one_sided(float(x), "+")
            if dr < dl - 1e-9 * max(1.0, abs(dl)):
                raise ValueError(f"holding cost slope decreases at {x}")
        f2 = self.f_prime.derivative()
        probes = np.concatenate([
            np.linspace(lo, hi, 9)
            for lo, hi in zip(
                np.concatenate([[bp[0] - 10.0 if len(bp) else -10.0], bp]),
                np.concatenate([bp, [bp[-1] + 10.0 if len(bp) else 10.0]]))
        ]) if len(bp) else np.linspace(-10, 10, 21)
        if np.any(f2(probes) < -1e-9):
            raise ValueError("holding cost is not convex")

    def _eventually_nonneg(self) -> bool:
        s = self._slope_plus
        return s == math.inf or s + self.tilde_shift >= 0

    def _somewhere_negative(self) -> bool:
        s = self._slope_minus
        return s == -math.inf or s + self.tilde_shift < 0

    # -- derived thresholds ---------------------------------------------------
    def a_bar(self) -> float:
        """inf{a : f~'(a) >= 0}; finite only when slope1 holds."""
        return _left_threshold(self.f_tilde_prime_pw, 0.0)

    def a_bar_bar(self) -> float:
        """inf{a : f'(a) + q K_p > 0}."""
        return _left_threshold(self.f_prime.add_const(self.q * self.K_p), 0.0,
                               strict=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CostSpec":
        pieces = [(p.get("from"), p["coeffs"]) for p in d["f"]["pieces"]]
        c = d["costs"]
        return cls(q=c["q"], lam=c["lambda"], K_c=c["K_c"], K_p=c["K_p"],
                   f_pieces=pieces)


def _left_threshold(g: PiecewisePolyExp, level: float,
                    strict: bool = False) -> float:
    """inf{x : g(x) >= level} (or > level) for nondecreasing g.

    Geometric bracket growth plus bisection to 1e-10; returns +/-inf when the
    set is empty / everything.
    """
    def ok(x):
        v = g(x)
        return v > level if strict else v >= level

    hi = 1.0
    while not ok(hi):
        hi = hi * 2 if hi > 0 else 1.0
        if hi > 1e12:
            return math.inf
    lo = -1.0
    while ok(lo):
        lo *= 2
        if lo < -1e12:
            return -math.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-10:
            break
    return hi


@dataclass(frozen=True)
class HybridPolicy:
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("lower barrier must sit strictly below upper")


def f_tilde_prime(spec: CostSpec, x: float) -> float:
    """Perturbed marginal holding cost f'(x) + q K_c + lam (K_c - K_p),
    right derivative at kinks."""
    return float(spec.f_tilde_prime_pw(x))


# ---------------------------------------------------------------------------
# per-(a, b) assembled bundle, cached on the kernel set
# ---------------------------------------------------------------------------

class _PolicyBundle:
    def __init__(self, spec: CostSpec, ks: KernelSet, a: float, b: float):
        if not (abs(spec.q - ks.q) < 1e-14 and abs(spec.lam - ks.lam) < 1e-14):
            raise ValueError("CostSpec and KernelSet disagree on (q, lam)")
        self.spec, self.ks, self.a, self.b = spec, ks, a, b
        D = b - a
        self.comp = get_compensated(spec, ks)
        # Gamma and gamma through the split forms: well-conditioned at any
        # barrier gap (the naive assembly amplifies the rounding of the
        # growing coefficient by e^{phi_ql (b-a)})
        self.gamma_two_a = self.comp.gamma_two(a)
        self.gamma_big = self.comp.gamma_big(a, b)
        self.gamma_small = self.comp.gamma_small(a, b)
        self.theta_D = ks.theta(D)
        self.z_boost_D = ks.boosted.z(D)
        self._cache: dict = {}

    # lazy heavy pieces ------------------------------------------------------
    def _get(self, name, builder):
        if name not in self._cache:
            self._cache[name] = builder()
        return self._cache[name]

    # -- dual assembly --------------------------------------------------------
    # Every cost stream is affine in the growing exponential component
    # chi(u) = e^{phi_ql (u - a)} of the boosted scale function.  Assembling
    # the closed forms directly mixes chi-carrying coefficients of size
    # e^{phi_ql |a|} whose cancellations cannot survive double precision once
    # the barrier gap is large, so each stream is built as
    #
    #     stream = clean assembly (boosted kernels with chi removed)
    #              + B_stream * Lambda(x)
    #
    # where Lambda is the universal response of the assembly to the chi
    # channel and B_stream is a compensated scalar.  Below the lower barrier
    # every stream is exactly affine and is anchored as such.

    def _dual_ok(self) -> bool:
        if len(self.spec.f.breakpoints) > 0:
            return False
        return self.ks.phi_q_lam * abs(self.a) < 690.0 and \
            self.ks.phi_q_lam * (self.b - self.a) < 690.0

    # compensated channel scalars -------------------------------------------
    def _g0(self) -> float:
        """Gamma(a,b)/Theta(b-a) - Gamma_2(a), with the exactly-cancelling
        growing parts removed symbolically."""
        D = self.b - self.a
        comp = self.comp
        num = (math.exp(-self.ks.phi_q * D) * comp.gamma_tilde_reg(self.a, self.b)
               - self.gamma_two_a * comp.theta_minus(D))
        return num / self.theta_D

    def _B_v(self) -> float:
        return self._g0() / self.ks.phi_q_lam

    def _t2_poly_fn(self, h: PiecewisePolyExp) -> PolyExpFunction:
        """u -> integral_0^inf e^{-phi_ql z} h(z + u) dz for single-piece
        polynomial h."""
        phi_ql = self.ks.phi_q_lam
        coeffs = np.zeros(1)
        for c, r in h.pieces[-1].terms:
            if r != 0.0:
                raise ValueError("dual assembly needs polynomial cost pieces")
            coeffs = np.polynomial.polynomial.polyadd(coeffs, np.asarray(c))
        out = np.zeros(len(coeffs))
        for k, ck in enumerate(coeffs):
            if ck == 0.0:
                continue
            for j in range(k + 1):
                out[j] += ck * math.comb(k, j) \
                    * math.factorial(k - j) / phi_ql ** (k - j + 1)
        return PolyExpFunction.poly(out)

    def _t2_at(self, h: PiecewisePolyExp, u: float) -> float:
        return float(self._t2_poly_fn(h)(u))

    def _B_h(self) -> float:
        ks, spec, comp = self.ks, self.spec, self.comp
        q, lam, phi_q, phi_ql = ks.q, ks.lam, ks.phi_q, ks.phi_q_lam
        a, b = self.a, self.b
        t2_fp_a = self._t2_at(spec.f_prime, a)
        rho_fp_clean = self._rho_clean_pw(spec.f_prime)
        mid_clean = (-comp.c_pos * t2_fp_a / (phi_ql - phi_q)
                     + math.exp(phi_q * a)
                     * rho_fp_clean.multiply_exp(-phi_q).integrate(a, b))
        tail_fp = weighted_tail_integral(spec.f_prime, phi_q, a)
        n_g_clean = tail_fp + lam * mid_clean
        return (n_g_clean - t2_fp_a * comp.theta_minus(b - a)) \
            / (self.theta_D * phi_ql)

    def _B_streams(self) -> tuple[float, float]:
        ks, comp = self.ks, self.comp
        q, lam, phi_q, phi_ql = ks.q, ks.lam, ks.phi_q, ks.phi_q_lam
        D = self.b - self.a
        dE = comp.delta_E(D)
        b_rp = lam / ((lam + q) * phi_q * phi_ql) * (
            q * math.exp(-phi_q * D) / self.theta_D + lam * dE)
        b_rc = -lam * dE / (phi_q * phi_ql)
        return b_rp, b_rc

    def _k_tilde(self) -> tuple[float, float]:
        """k1 / Z_{q+lam}(D) and k2 / Z_{q+lam}(D), compensated."""
        ks, comp = self.ks, self.comp
        q, lam, phi_q = ks.q, ks.lam, ks.phi_q
        D = self.b - self.a
        E_D = comp.E_inf + comp.delta_E(D)
        e_over_theta = math.exp(-phi_q * D) / self.theta_D
        k1t = lam / phi_q * (
            (e_over_theta + lam * E_D / q) / (lam + q) - 1.0 / q)
        k2t = (lam + q - phi_q * ks.psi_prime_zero - lam * E_D) / (q * phi_q)
        return k1t, k2t

    # channel response --------------------------------------------------------
    def _channel(self, B: float) -> PiecewisePolyExp:
        """B times the assembly's response to the growing kernel component:

            Lambda(x) = lam c_pos [ int_a^{x ^ b} e^{phi_ql (u-a)} W_q(x-u) du
                                    + (e^{phi_ql (b-a)} / q) Z_q(x - b) ]

        expanded in closed form; continuous across both barriers."""
        ks, comp = self.ks, self.comp
        q, lam, phi_ql = ks.q, ks.lam, ks.phi_q_lam
        a, b = self.a, self.b
        D = b - a
        c = comp.c_pos
        BE = B * math.exp(phi_ql * D)
        base = list(zip(
            (1.0 / psi_derivative(ks.model, r) for r in ks.base.roots.all),
            ks.base.roots.all))
        Z0 = 1.0 - q * sum(cr / r for cr, r in base)
        const_be = c * lam * BE / q
        below = PolyExpFunction.const(const_be)
        interior_terms = [((const_be,), 0.0),
                          ((c * BE * math.exp(min(-phi_ql * b, 700.0)),),
                           phi_ql)]
        for cr, r in base:
            interior_terms.append(
                ((-lam * c * B * cr / (phi_ql - r) * math.exp(-r * a),), r))
        outer_terms = [((const_be * Z0,), 0.0)]
        for cr, r in base:
            coef = lam * c * cr * math.exp(-r * b) * (
                (BE - B * math.exp(r * D)) / (phi_ql - r) + BE / r)
            outer_terms.append(((coef,), r))
        return PiecewisePolyExp(
            np.array([a, b]),
            [below, PolyExpFunction.make(interior_terms),
             PolyExpFunction.make(outer_terms)])

    # clean kernels ------------------------------------------------------------
    def _clean(self) -> dict:
        return get_clean_boosted(self.ks, self.comp)

    def _rho_clean_pw(self, h: PiecewisePolyExp) -> PiecewisePolyExp:
        """rho_a(u; h) minus its chi component c_pos T2_h(a) e^{phi_ql (u-a)}."""
        def build():
            from .polyexp import convolve_with_shift
            t2 = self._t2_poly_fn(h)
            conv = convolve_with_shift(h, self._clean()["w_fn"], self.a)
            return conv + PiecewisePolyExp(
                np.empty(0), [t2.scale(-self.comp.c_pos)])
        return self._get(("rho_clean", id(h)), build)

    def _scr_clean(self, name: str) -> PiecewisePolyExp:
        def build():
            from .polyexp import convolve_trunc
            ks = self.ks
            base_pw = {"z": ks.base.z, "w_bar": ks.base.w_bar,
                       "z_bar": ks.base.z_bar}[name]
            return base_pw.translate(self.a) + convolve_trunc(
                self._clean()[name].translate(self.a), ks.base.w_fn,
                self.a, self.b).scale(ks.lam)
        return self._get(("scr_clean", name), build)

    def _kz_clean(self) -> PiecewisePolyExp:
        """[q scrZ_clean + lam Z^{(q)}(x-b) Z_clean(D)] / (lam + q): the
        clean part of K_b(x, a) Z_{q+lam}(b - a)."""
        def build():
            ks = self.ks
            z_cD = self._clean()["z"](self.b - self.a)
            return (self._scr_clean("z").scale(ks.q)
                    + ks.base.z.translate(self.b).scale(ks.lam * z_cD)
                    ).scale(1.0 / (ks.lam + ks.q))
        return self._get("kz_clean", build)

    def _tail_clean(self) -> PiecewisePolyExp:
        def build():
            ks, spec = self.ks, self.spec
            q, lam = ks.q, ks.lam
            D = self.b - self.a
            cb = self._clean()
            zq_b = ks.base.z.translate(self.b)
            zbarq_b = ks.base.z_bar.translate(self.b)
            part = zbarq_b.scale(-lam / (lam + q) * spec.K_p)
            part = part + (self._scr_clean("w_bar")
                           + zq_b.scale(lam / q * cb["w_bar"](D))).scale(
                spec.K_c * ks.psi_prime_zero)
            part = part + (self._scr_clean("z_bar")
                           + zq_b.scale(lam / q * cb["z_bar"](D))).scale(
                lam / (lam + q) * spec.K_p - spec.K_c)
            return part
        return self._get("tail_clean", build)

    def _h_kernel_clean(self, h: PiecewisePolyExp) -> tuple[PiecewisePolyExp, float]:
        """Clean part of H_b(x, a; h) plus the clean rho value at b."""
        from .polyexp import convolve_trunc, convolve_with_shift
        ks = self.ks
        rho_clean = self._rho_clean_pw(h)
        rho_clean_b = rho_clean(self.b)
        out = (convolve_with_shift(h, ks.base.w_fn, self.b)
               + convolve_trunc(h + rho_clean.scale(ks.lam), ks.base.w_fn,
                                self.a, self.b)
               + ks.base.z.translate(self.b).scale(
                   ks.lam / ks.q * rho_clean_b))
        return out, rho_clean_b

    def _finalise(self, pw: PiecewisePolyExp,
                  slope_below_a: float) -> PiecewisePolyExp:
        """Anchor the exactly-affine below-barrier region."""
        a = self.a
        bp = pw.breakpoints
        pieces = list(pw.pieces)
        anchor = pw.piece_at(a, "+")(a)
        affine = PolyExpFunction.poly([anchor - slope_below_a * a,
                                       slope_below_a])
        for i in range(len(pieces)):
            hi = bp[i] if i < len(bp) else math.inf
            if hi <= a + 1e-12:
                pieces[i] = affine
        return PiecewisePolyExp(bp, pieces)

    @property
    def k_pw(self):
        return self._get("k_pw", lambda: self.ks.k_kernel(self.b, self.a))

    @property
    def replenish_tail_pw(self):
        """The x-dependent part shared by the replenishment formulas."""
        def build():
            ks, spec = self.ks, self.spec
            q, lam = ks.q, ks.lam
            a, b = self.a, self.b
            zq_b = ks.base.z.translate(b)
            zbarq_b = ks.base.z_bar.translate(b)
            scr_wbar = ks.scr_w_bar(b, a)
            scr_zbar = ks.scr_z_bar(b, a)
            wbar_D = ks.boosted.w_bar(b - a)
            zbar_D = ks.boosted.z_bar(b - a)
            part = zbarq_b.scale(-lam / (lam + q) * spec.K_p)
            part = part + (scr_wbar + zq_b.scale(lam / q * wbar_D)).scale(
                spec.K_c * ks.psi_prime_zero)
            part = part + (scr_zbar + zq_b.scale(lam / q * zbar_D)).scale(
                lam / (lam + q) * spec.K_p - spec.K_c)
            return part
        return self._get("replenish_tail", build)

    def k1_k2(self) -> tuple[float, float]:
        ks, spec = self.ks, self.spec
        q, lam, phi_q = ks.q, ks.lam, ks.phi_q
        D = self.b - self.a
        e = math.exp(-phi_q * D)
        Z = self.z_boost_D
        k1 = ((1.0 / (lam + q)) * (1.0 + lam / q * Z) * e / self.theta_D
              - 1.0 / q) * lam * Z / phi_q
        k2 = (-lam * Z * e / self.theta_D + lam + q
              - phi_q * ks.psi_prime_zero) * Z / (q * phi_q)
        return k1, k2

    def _holding_numerator(self) -> float:
        def build():
            ks, spec = self.ks, self.spec
            phi_q, lam = ks.phi_q, ks.lam
            tail_fp = weighted_tail_integral(spec.f_prime, phi_q, self.a)
            rho_fp = ks.rho(self.a, spec.f_prime, boosted=True)
            mid_fp = math.exp(phi_q * self.a) \
                * rho_fp.multiply_exp(-phi_q).integrate(self.a, self.b)
            return tail_fp + lam * mid_fp
        return self._get("holding_numerator", build)

    @property
    def v(self) -> PiecewisePolyExp:
        def build():
            ks, spec = self.ks, self.spec
            q = ks.q
            if self._dual_ok():
                A = (self._g0() + self.gamma_two_a + spec.f(self.a)
                     - spec.K_c * ks.psi_prime_zero) / q
                H_clean, _ = self._h_kernel_clean(spec.f)
                raw = (H_clean.scale(-1.0)
                       + self._kz_clean().scale(A)
                       + self._tail_clean()
                       + self._channel(self._B_v()))
            else:
                H_f = ks.h_kernel(self.b, self.a, spec.f)
                A = (self.gamma_big / self.theta_D + spec.f(self.a)
                     - spec.K_c * ks.psi_prime_zero) / q
                raw = (H_f.scale(-1.0)
                       + self.k_pw.scale(A * self.z_boost_D)
                       + self.replenish_tail_pw)
            return self._finalise(raw, -spec.K_c)
        return self._get("v", build)

    @property
    def v_prime(self) -> PiecewisePolyExp:
        return self._get("v_prime", lambda: self.v.derivative())

    @property
    def v_second(self) -> PiecewisePolyExp:
        return self._get("v_second", lambda: self.v_prime.derivative())

    @property
    def v_holding(self) -> PiecewisePolyExp:
        def build():
            ks, spec = self.ks, self.spec
            q = ks.q
            if self._dual_ok():
                B_h = self._B_h()
                t2_fp_a = self._t2_at(spec.f_prime, self.a)
                G_tilde = (ks.phi_q_lam * B_h + t2_fp_a + spec.f(self.a)) / q
                H_clean, _ = self._h_kernel_clean(spec.f)
                raw = (H_clean.scale(-1.0)
                       + self._kz_clean().scale(G_tilde)
                       + self._channel(B_h))
            else:
                H_f = ks.h_kernel(self.b, self.a, spec.f)
                G = (self._holding_numerator() / self.theta_D
                     + spec.f(self.a)) * self.z_boost_D / q
                raw = H_f.scale(-1.0) + self.k_pw.scale(G)
            return self._finalise(raw, 0.0)
        return self._get("v_holding", build)

    @property
    def v_replenish(self) -> PiecewisePolyExp:
        def build():
            ks, spec = self.ks, self.spec
            if self._dual_ok():
                k1t, k2t = self._k_tilde()
                b_rp, b_rc = self._B_streams()
                raw = (self._kz_clean().scale(spec.K_p * k1t + spec.K_c * k2t)
                       + self._tail_clean()
                       + self._channel(spec.K_p * b_rp + spec.K_c * b_rc))
            else:
                k1, k2 = self.k1_k2()
                raw = (self.k_pw.scale(spec.K_p * k1 + spec.K_c * k2)
                       + self.replenish_tail_pw)
            return self._finalise(raw, -spec.K_c)
        return self._get("v_replenish", build)

    @property
    def v_fprime(self) -> PiecewisePolyExp:
        def build():
            ks, spec = self.ks, self.spec
            q, lam, phi_q = ks.q, ks.lam, ks.phi_q
            D = self.b - self.a
            const = (lam / (lam + q) * spec.K_p - spec.K_c) * (lam + q) / q
            if self._dual_ok():
                comp = self.comp
                gamma_reg = (spec.K_p - spec.K_c) - comp.rho_clean(self.a, self.b)
                N_clean = math.exp(-phi_q * D) * (
                    phi_q * comp.gamma_tilde_reg(self.a, self.b)
                    - lam * gamma_reg) / self.theta_D
                # N = N_clean + phi_ql Gamma_2 (1 - Theta_-/Theta)
                frac = comp.theta_minus(D) / self.theta_D
                N = N_clean + ks.phi_q_lam * self.gamma_two_a * (1.0 - frac)
                B_fp = N_clean / ks.phi_q_lam - self.gamma_two_a * frac
                H_clean, _ = self._h_kernel_clean(spec.f_tilde_prime_pw)
                raw = (H_clean.scale(-1.0)
                       + PiecewisePolyExp.constant(const)
                       + self._kz_clean().scale(N / q)
                       + self._channel(B_fp))
            else:
                H_ftp = ks.h_kernel(self.b, self.a, spec.f_tilde_prime_pw)
                N = (phi_q * self.gamma_big
                     - lam * math.exp(-phi_q * D) * self.gamma_small
                     ) / self.theta_D
                raw = (H_ftp.scale(-1.0)
                       + PiecewisePolyExp.constant(const)
                       + self.k_pw.scale(N * self.z_boost_D / q))
            return self._finalise(raw, 0.0)
        return self._get("v_fprime", build)

    @property
    def rp_stream(self) -> PiecewisePolyExp:
        def build():
            ks, spec = self.ks, self.spec
            q, lam = ks.q, ks.lam
            a, b = self.a, self.b
            zq_b = ks.base.z.translate(b)
            if self._dual_ok():
                k1t, _ = self._k_tilde()
                cb = self._clean()
                k_small_clean = (ks.base.z_bar.translate(b)
                                 + zq_b.scale(-lam / q * cb["z_bar"](b - a))
                                 + self._scr_clean("z_bar").scale(-1.0)
                                 ).scale(lam / (lam + q))
                raw = (self._kz_clean().scale(k1t)
                       + k_small_clean.scale(-1.0)
                       + self._channel(self._B_streams()[0]))
            else:
                k1, _ = self.k1_k2()
                k_small = (ks.base.z_bar.translate(b)
                           + zq_b.scale(-lam / q * ks.boosted.z_bar(b - a))
                           + ks.scr_z_bar(b, a).scale(-1.0)
                           ).scale(lam / (lam + q))
                raw = self.k_pw.scale(k1) + k_small.scale(-1.0)
            return self._finalise(raw, 0.0)
        return self._get("rp_stream", build)

    @property
    def rc_stream(self) -> PiecewisePolyExp:
        def build():
            ks = self.ks
            q, lam = ks.q, ks.lam
            a, b = self.a, self.b
            zq_b = ks.base.z.translate(b)
            if self._dual_ok():
                _, k2t = self._k_tilde()
                cb = self._clean()
                i_clean = (self._scr_clean("z_bar")
                           + self._scr_clean("w_bar").scale(-ks.psi_prime_zero)
                           + zq_b.scale(lam / q * (cb["z_bar"](b - a)
                                                   - ks.psi_prime_zero
                                                   * cb["w_bar"](b - a))))
                raw = (self._kz_clean().scale(k2t)
                       + i_clean.scale(-1.0)
                       + self._channel(self._B_streams()[1]))
            else:
                _, k2 = self.k1_k2()
                i_fn = (ks.scr_z_bar(b, a)
                        + ks.scr_w_bar(b, a).scale(-ks.psi_prime_zero)
                        + zq_b.scale(lam / q * (ks.boosted.z_bar(b - a)
                                                - ks.psi_prime_zero
                                                * ks.boosted.w_bar(b - a))))
                raw = self.k_pw.scale(k2) + i_fn.scale(-1.0)
            return self._finalise(raw, -1.0)
        return self._get("rc_stream", build)


def get_bundle(spec: CostSpec, ks: KernelSet, a: float, b: float) -> _PolicyBundle:
    key = ("bundle", spec.token, a, b)
    hit = ks._cache.get(key)
    if hit is None:
        hit = _PolicyBundle(spec, ks, a, b)
        ks._cache[key] = hit
    return hit


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def gamma_big(spec: CostSpec, ks: KernelSet, a: float, b: float) -> float:
    if not a < b:
        raise ValueError("need a < b")
    return get_bundle(spec, ks, a, b).gamma_big


def gamma_small(spec: CostSpec, ks: KernelSet, a: float, b: float) -> float:
    if not a < b:
        raise ValueError("need a < b")
    return get_bundle(spec, ks, a, b).gamma_small


def value_total(spec: CostSpec, ks: KernelSet, pol: HybridPolicy, x) -> float:
    return get_bundle(spec, ks, pol.a, pol.b).v(x)


def value_holding(spec: CostSpec, ks: KernelSet, pol: HybridPolicy, x) -> float:
    return get_bundle(spec, ks, pol.a, pol.b).v_holding(x)


def value_replenish(spec: CostSpec, ks: KernelSet, pol: HybridPolicy, x) -> float:
    return get_bundle(spec, ks, pol.a, pol.b).v_replenish(x)


def value_derivative(spec: CostSpec, ks: KernelSet, pol: HybridPolicy,
                     x: float, side: str = "+") -> float:
    return get_bundle(spec, ks, pol.a, pol.b).v_prime.one_sided(x, side)


def value_second_derivative(spec: CostSpec, ks: KernelSet, pol: HybridPolicy,
                            x: float, side: str = "+") -> float:
    if ks.model.is_bounded_variation:
        raise UnsupportedOrderError(
            "second derivative of the cost is defined only for unbounded "
            "variation (sigma > 0)")
    return get_bundle(spec, ks, pol.a, pol.b).v_second.one_sided(x, side)


def value_fprime(spec: CostSpec, ks: KernelSet, pol: HybridPolicy, x) -> float:
    return get_bundle(spec, ks, pol.a, pol.b).v_fprime(x)


def value_fprime_at_a(spec: CostSpec, ks: KernelSet, pol: HybridPolicy) -> float:
    """Specialised boundary form at the lower barrier."""
    bd = get_bundle(spec, ks, pol.a, pol.b)
    q, lam, phi_q = ks.q, ks.lam, ks.phi_q
    D = pol.b - pol.a
    N = (phi_q * bd.gamma_big
         - lam * math.exp(-phi_q * D) * bd.gamma_small) / bd.theta_D
    return (lam / (q * (lam + q)) * N * bd.z_boost_D
            + lam / q * bd.gamma_small - spec.K_c + N / (lam + q))


def value_fprime_at_b(spec: CostSpec, ks: KernelSet, pol: HybridPolicy) -> float:
    """Specialised boundary form at the upper barrier."""
    bd = get_bundle(spec, ks, pol.a, pol.b)
    q, lam, phi_q = ks.q, ks.lam, ks.phi_q
    D = pol.b - pol.a
    N = (phi_q * bd.gamma_big
         - lam * math.exp(-phi_q * D) * bd.gamma_small) / bd.theta_D
    return (N * bd.z_boost_D / q + (lam + q) / q * bd.gamma_small - spec.K_p)


def value_rp_stream(spec: CostSpec, ks: KernelSet, pol: HybridPolicy, x) -> float:
    """Expected discounted replenishment volume in the Poisson-timed mode."""
    return get_bundle(spec, ks, pol.a, pol.b).rp_stream(x)


def value_rc_stream(spec: CostSpec, ks: KernelSet, pol: HybridPolicy, x) -> float:
    """Expected discounted replenishment volume in the continuous mode."""
    return get_bundle(spec, ks, pol.a, pol.b).rc_stream(x)
