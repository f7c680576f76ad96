"""Exact algebra for piecewise sums of polynomial-times-exponential terms.

Everything the scale-function machinery needs (antiderivatives, convolutions
against kernels supported on [0, inf), exponentially weighted tail integrals)
stays inside the class of functions ``sum_k p_k(x) exp(r_k x)`` with piecewise
support, so all downstream barrier searches evaluate closed forms instead of
quadrature.  Adaptive quadrature survives only as a test oracle.

Conventions:
  * a ``PolyExpFunction`` is a plain (non-piecewise) sum of terms;
  * a ``PiecewisePolyExp`` holds breakpoints ``b_0 < ... < b_{m-1}`` and m+1
    pieces, piece 0 covering ``(-inf, b_0)`` and piece m covering
    ``[b_{m-1}, inf)``;
  * rates closer than ``RATE_COLLISION_TOL`` are treated as equal (resonant
    integrals then bump the polynomial degree instead of dividing by a tiny
    rate gap); rates that are distinct but nearly collide (gaps around
    1e-3 .. 1e-7) are exact in the representation yet ill-conditioned to
    evaluate, because the split into the two exponential rates cancels;
    callers are expected to keep rate families separated, which holds for
    Laplace-exponent roots at distinct discount levels;
  * polynomial degrees are capped at ``MAX_DEGREE``; beyond that the
    double-precision recurrences are not trustworthy and we raise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

__all__ = [
    "PolyExpFunction",
    "PiecewisePolyExp",
    "DegreeCapError",
    "DivergenceError",
    "convolve_with_shift",
    "convolve_trunc",
    "weighted_tail_integral",
    "RATE_COLLISION_TOL",
    "MAX_DEGREE",
]

RATE_COLLISION_TOL = 1e-9
MAX_DEGREE = 16


class DegreeCapError(ValueError):
    """Polynomial degree exceeded MAX_DEGREE."""


class DivergenceError(ValueError):
    """An integral over an unbounded interval does not converge."""


def _trim(coeffs: np.ndarray) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    if c.ndim == 0:
        c = c[None]
    nz = np.nonzero(c)[0]
    if len(nz) == 0:
        return np.zeros(1)
    return c[: nz[-1] + 1].copy()


def _check_degree(coeffs: np.ndarray):
    if len(coeffs) - 1 > MAX_DEGREE:
        raise DegreeCapError(
            f"polynomial degree {len(coeffs) - 1} exceeds cap {MAX_DEGREE}")


def _poly_shift(coeffs: np.ndarray, c: float) -> np.ndarray:
    """Coefficients of p(x + c) given those of p(x)."""
    n = len(coeffs)
    out = np.zeros(n)
    for k in range(n):
        pk = coeffs[k]
        if pk == 0.0:
            continue
        for j in range(k + 1):
            out[j] += pk * math.comb(k, j) * c ** (k - j)
    return out


def _moment(n: int, gamma: float, T: float) -> float:
    """integral_0^T u^n e^{gamma u} du, stable for small |gamma*T|."""
    if T == 0.0:
        return 0.0
    gt = gamma * T
    if abs(gt) < 0.5:
        # series: T^{n+1} sum_k (gamma T)^k / (k! (n+k+1))
        acc, term = 0.0, 1.0
        for k in range(0, 40):
            contrib = term / (n + k + 1)
            acc += contrib
            if abs(contrib) < 1e-18 * abs(acc):
                break
            term *= gt / (k + 1)
        return T ** (n + 1) * acc
    m = math.expm1(gt) / gamma
    eg = math.exp(gt)
    for j in range(1, n + 1):
        m = (T**j * eg - j * m) / gamma
    return m


def _poly_moment(coeffs: np.ndarray, extra_pow: int, gamma: float,
                 c: float, d: float) -> float:
    """integral_c^d y^extra_pow * p(y) * e^{gamma y} dy (finite limits)."""
    total = 0.0
    T = d - c
    ec = math.exp(gamma * c)
    for i, pi in enumerate(coeffs):
        if pi == 0.0:
            continue
        n = i + extra_pow
        # shift y = c + u: y^n = sum_j C(n,j) c^{n-j} u^j
        s = 0.0
        for j in range(n + 1):
            s += math.comb(n, j) * c ** (n - j) * _moment(j, gamma, T)
        total += pi * ec * s
    return total


def _primitive_coeffs(coeffs: np.ndarray, rate: float) -> np.ndarray:
    """Q with d/dx [Q(x) e^{rate x}] = p(x) e^{rate x} (rate != 0)."""
    n = len(coeffs)
    q = np.zeros(n)
    q[n - 1] = coeffs[n - 1] / rate
    for k in range(n - 2, -1, -1):
        q[k] = (coeffs[k] - (k + 1) * q[k + 1]) / rate
    return q


@dataclass(frozen=True)
class PolyExpFunction:
    """Canonical sum of (coeffs, rate) terms: sum_k p_k(x) e^{r_k x}."""

    terms: tuple[tuple[tuple[float, ...], float], ...]

    @staticmethod
    def make(terms) -> "PolyExpFunction":
        """Merge terms whose rates collide within RATE_COLLISION_TOL."""
        merged: list[tuple[np.ndarray, float]] = []
        for coeffs, rate in terms:
            c = _trim(np.asarray(coeffs, dtype=float))
            _check_degree(c)
            if np.all(c == 0.0):
                continue
            for i, (mc, mr) in enumerate(merged):
                if abs(mr - rate) < RATE_COLLISION_TOL:
                    merged[i] = (npoly.polyadd(mc, c), mr)
                    break
            else:
                merged.append((c, float(rate)))
        merged = [(c, r) for c, r in ((_trim(c), r) for c, r in merged)
                  if not np.all(c == 0.0)]
        merged.sort(key=lambda t: t[1])
        return PolyExpFunction(tuple((tuple(c), r) for c, r in merged))

    @staticmethod
    def zero() -> "PolyExpFunction":
        return PolyExpFunction(())

    @staticmethod
    def const(v: float) -> "PolyExpFunction":
        return PolyExpFunction.make([((v,), 0.0)])

    @staticmethod
    def expo(coef: float, rate: float) -> "PolyExpFunction":
        return PolyExpFunction.make([((coef,), rate)])

    @staticmethod
    def poly(coeffs) -> "PolyExpFunction":
        return PolyExpFunction.make([(tuple(coeffs), 0.0)])

    @property
    def is_zero(self) -> bool:
        return len(self.terms) == 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        # overflow saturates to inf, which keeps the sign information
        # bracket-growth probes at absurd arguments rely on
        with np.errstate(over="ignore"):
            for coeffs, rate in self.terms:
                ex = np.exp(np.minimum(rate * x, 708.0))
                out = out + npoly.polyval(x, np.asarray(coeffs)) * ex
        return float(out) if out.ndim == 0 else out

    def __add__(self, other: "PolyExpFunction") -> "PolyExpFunction":
        return PolyExpFunction.make(list(self.terms) + list(other.terms))

    def scale(self, s: float) -> "PolyExpFunction":
        return PolyExpFunction.make(
            [(tuple(np.asarray(c) * s), r) for c, r in self.terms])

    def __mul__(self, other: "PolyExpFunction") -> "PolyExpFunction":
        out = []
        for c1, r1 in self.terms:
            for c2, r2 in other.terms:
                out.append((tuple(npoly.polymul(np.asarray(c1), np.asarray(c2))),
                            r1 + r2))
        return PolyExpFunction.make(out)

    def multiply_exp(self, s: float) -> "PolyExpFunction":
        return PolyExpFunction.make([(c, r + s) for c, r in self.terms])

    def translate(self, c: float) -> "PolyExpFunction":
        """x -> f(x - c)."""
        out = []
        for coeffs, rate in self.terms:
            shifted = _poly_shift(np.asarray(coeffs), -c)
            out.append((tuple(shifted * math.exp(-rate * c)), rate))
        return PolyExpFunction.make(out)

    def derivative(self) -> "PolyExpFunction":
        out = []
        for coeffs, rate in self.terms:
            c = np.asarray(coeffs)
            d = npoly.polyadd(npoly.polyder(c) if len(c) > 1 else np.zeros(1),
                              rate * c)
            out.append((tuple(d), rate))
        return PolyExpFunction.make(out)

    def primitive(self) -> "PolyExpFunction":
        """One antiderivative (integration constants per term dropped)."""
        out = []
        for coeffs, rate in self.terms:
            c = np.asarray(coeffs)
            if abs(rate) < RATE_COLLISION_TOL:
                out.append((tuple(npoly.polyint(c)), 0.0))
            else:
                out.append((tuple(_primitive_coeffs(c, rate)), rate))
        return PolyExpFunction.make(out)

    def definite_integral(self, lo: float, hi: float) -> float:
        """integral_lo^hi, via stable moments."""
        total = 0.0
        for coeffs, rate in self.terms:
            total += _poly_moment(np.asarray(coeffs), 0, rate, lo, hi)
        return total

    def tail_integral(self, lo: float) -> float:
        """integral_lo^inf; requires every rate < 0."""
        total = 0.0
        for coeffs, rate in self.terms:
            if rate >= -RATE_COLLISION_TOL:
                raise DivergenceError(
                    f"tail integral diverges: term rate {rate} >= 0")
            beta = -rate
            e = math.exp(-beta * lo)
            for k, ck in enumerate(np.asarray(coeffs)):
                if ck == 0.0:
                    continue
                # integral_lo^inf y^k e^{-beta y} dy
                s = sum(math.factorial(k) / math.factorial(j)
                        * lo**j / beta ** (k - j + 1) for j in range(k + 1))
                total += ck * e * s
        return total

    def max_rate(self) -> float:
        return max((r for _, r in self.terms), default=-np.inf)


class PiecewisePolyExp:
    """Piecewise PolyExpFunction on intervals split by sorted breakpoints."""

    __slots__ = ("breakpoints", "pieces")

    def __init__(self, breakpoints, pieces):
        bp = np.asarray(breakpoints, dtype=float)
        if bp.ndim != 1 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing 1-D")
        if len(pieces) != len(bp) + 1:
            raise ValueError("need exactly len(breakpoints)+1 pieces")
        self.breakpoints = bp
        self.pieces = list(pieces)

    # -- constructors ------------------------------------------------------
    @staticmethod
    def zero() -> "PiecewisePolyExp":
        return PiecewisePolyExp(np.empty(0), [PolyExpFunction.zero()])

    @staticmethod
    def constant(v: float) -> "PiecewisePolyExp":
        return PiecewisePolyExp(np.empty(0), [PolyExpFunction.const(v)])

    @staticmethod
    def from_function_on(f: PolyExpFunction, low: float) -> "PiecewisePolyExp":
        """f on [low, inf), zero below."""
        return PiecewisePolyExp(np.array([low]), [PolyExpFunction.zero(), f])

    # -- structure helpers -------------------------------------------------
    def piece_index(self, x: float, side: str = "+") -> int:
        bp = self.breakpoints
        if side == "+":
            return int(np.searchsorted(bp, x, side="right"))
        return int(np.searchsorted(bp, x, side="left"))

    def piece_at(self, x: float, side: str = "+") -> PolyExpFunction:
        return self.pieces[self.piece_index(x, side)]

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        scalar = x_arr.ndim == 0
        x_arr = np.atleast_1d(x_arr)
        idx = np.searchsorted(self.breakpoints, x_arr, side="right")
        out = np.empty_like(x_arr)
        for i in range(len(self.pieces)):
            mask = idx == i
            if np.any(mask):
                out[mask] = np.atleast_1d(self.pieces[i](x_arr[mask]))
        return float(out[0]) if scalar else out

    def one_sided(self, x: float, side: str = "+") -> float:
        return float(self.piece_at(x, side)(x))

    # -- algebra -----------------------------------------------------------
    def _binary(self, other: "PiecewisePolyExp", op) -> "PiecewisePolyExp":
        bp = np.unique(np.concatenate([self.breakpoints, other.breakpoints]))
        pieces = []
        probes = self._probes(bp)
        for t in probes:
            pieces.append(op(self.piece_at(t), other.piece_at(t)))
        return PiecewisePolyExp(bp, pieces)

    @staticmethod
    def _probes(bp: np.ndarray) -> list[float]:
        if len(bp) == 0:
            return [0.0]
        probes = [bp[0] - 1.0]
        for i in range(len(bp) - 1):
            probes.append(0.5 * (bp[i] + bp[i + 1]))
        probes.append(bp[-1] + 1.0)
        return probes

    def __add__(self, other) -> "PiecewisePolyExp":
        if isinstance(other, PolyExpFunction):
            other = PiecewisePolyExp(np.empty(0), [other])
        return self._binary(other, lambda a, b: a + b)

    def __sub__(self, other) -> "PiecewisePolyExp":
        return self + other.scale(-1.0)

    def scale(self, s: float) -> "PiecewisePolyExp":
        return PiecewisePolyExp(self.breakpoints,
                                [p.scale(s) for p in self.pieces])

    def add_const(self, v: float) -> "PiecewisePolyExp":
        return self + PiecewisePolyExp.constant(v)

    def multiply_exp(self, s: float) -> "PiecewisePolyExp":
        return PiecewisePolyExp(self.breakpoints,
                                [p.multiply_exp(s) for p in self.pieces])

    def translate(self, c: float) -> "PiecewisePolyExp":
        """x -> f(x - c)."""
        return PiecewisePolyExp(self.breakpoints + c,
                                [p.translate(c) for p in self.pieces])

    def derivative(self) -> "PiecewisePolyExp":
        return PiecewisePolyExp(self.breakpoints,
                                [p.derivative() for p in self.pieces])

    def antiderivative(self, lower: float) -> "PiecewisePolyExp":
        """Exact x -> integral_lower^x of self (continuous by construction)."""
        bp = self.breakpoints
        prims = [p.primitive() for p in self.pieces]
        n = len(self.pieces)
        # piece i of the result is prims[i] + C[i]; fix C by F(lower) = 0 and
        # continuity at every breakpoint.
        C = [0.0] * n
        i0 = int(np.searchsorted(bp, lower, side="right"))
        C[i0] = -prims[i0](lower)
        for i in range(i0, n - 1):
            C[i + 1] = C[i] + prims[i](bp[i]) - prims[i + 1](bp[i])
        for i in range(i0, 0, -1):
            C[i - 1] = C[i] + prims[i](bp[i - 1]) - prims[i - 1](bp[i - 1])
        pieces = [prims[i] + PolyExpFunction.const(C[i]) for i in range(n)]
        return PiecewisePolyExp(bp, pieces)

    def integrate(self, lo: float, hi: float) -> float:
        """Definite integral over [lo, hi] via stable per-piece moments."""
        if hi < lo:
            return -self.integrate(hi, lo)
        bp = self.breakpoints
        cuts = [lo] + [float(b) for b in bp if lo < b < hi] + [hi]
        total = 0.0
        for c, d in zip(cuts[:-1], cuts[1:]):
            piece = self.piece_at(0.5 * (c + d))
            total += piece.definite_integral(c, d)
        return total

    def max_rate(self) -> float:
        return max((p.max_rate() for p in self.pieces), default=-np.inf)


# ---------------------------------------------------------------------------
# convolution against a kernel supported on [0, inf)
# ---------------------------------------------------------------------------

def _full_piece_contrib(p: np.ndarray, r: float, w: PolyExpFunction,
                        c: float, d: float) -> PolyExpFunction:
    """x -> integral_c^d p(y) e^{ry} w(x - y) dy, valid for x >= d."""
    out_terms = []
    for qc, s in w.terms:
        qc = np.asarray(qc)
        gamma = r - s
        deg_q = len(qc) - 1
        coeffs = np.zeros(deg_q + 1)
        for j in range(deg_q + 1):
            K = 0.0
            for m_ in range(j, deg_q + 1):
                if qc[m_] == 0.0:
                    continue
                K += (qc[m_] * math.comb(m_, j) * (-1.0) ** (m_ - j)
                      * _poly_moment(p, m_ - j, gamma, c, d))
            coeffs[j] = K
        out_terms.append((tuple(coeffs), s))
    return PolyExpFunction.make(out_terms)


def _partial_piece_contrib(p: np.ndarray, r: float, w: PolyExpFunction,
                           c: float) -> PolyExpFunction:
    """x -> integral_c^x p(y) e^{ry} w(x - y) dy, valid on the piece above c.

    Substituting u = x - y gives e^{rx} * integral_0^{x-c} p(x-u) w(u)
    e^{(s-r)u} du per w-term; the u-moments are polynomial-exponential in x.
    """
    out = []
    for qc, s in w.terms:
        qc = np.asarray(qc)
        delta = s - r
        resonant = abs(delta) < RATE_COLLISION_TOL
        deg_p, deg_q = len(p) - 1, len(qc) - 1
        # accumulate: sum_j x^j * sum_k p_k C(k,j)(-1)^{k-j}
        #             * sum_m qc_m * m_{k-j+m}(delta, x-c)
        # where m_n(delta, T): resonant -> T^{n+1}/(n+1);
        # else P_n(T) e^{delta T} - P_n(0), P_n from the primitive recurrence.
        poly_rate_r = np.zeros(deg_p + deg_q + 2 + 1)   # terms at rate r
        poly_rate_s = np.zeros(deg_p + deg_q + 2 + 1)   # terms at rate s
        for k in range(deg_p + 1):
            if p[k] == 0.0:
                continue
            for j in range(k + 1):
                base = p[k] * math.comb(k, j) * (-1.0) ** (k - j)
                for m_ in range(deg_q + 1):
                    if qc[m_] == 0.0:
                        continue
                    n = (k - j) + m_
                    amp = base * qc[m_]
                    if resonant:
                        # T^{n+1}/(n+1) with T = x - c: polynomial in x
                        tpoly = np.zeros(n + 2)
                        tpoly[n + 1] = 1.0 / (n + 1)
                        tpoly = _poly_shift(tpoly, -c)
                        contrib = np.zeros(j + n + 2)
                        contrib[j: j + n + 2] = amp * tpoly
                        poly_rate_r = npoly.polyadd(poly_rate_r, contrib)
                    else:
                        mono = np.zeros(n + 1)
                        mono[n] = 1.0
                        P = _primitive_coeffs(mono, delta)
                        # P(x-c) e^{delta(x-c)} - P(0)
                        Pshift = _poly_shift(P, -c) * math.exp(-delta * c)
                        contrib_s = np.zeros(j + len(Pshift))
                        contrib_s[j: j + len(Pshift)] = amp * Pshift
                        poly_rate_s = npoly.polyadd(poly_rate_s, contrib_s)
                        contrib_r = np.zeros(j + 1)
                        contrib_r[j] = -amp * P[0]
                        poly_rate_r = npoly.polyadd(poly_rate_r, contrib_r)
        if np.any(poly_rate_r != 0.0):
            out.append((tuple(poly_rate_r), r))
        if np.any(poly_rate_s != 0.0):
            out.append((tuple(poly_rate_s), s))
    return PolyExpFunction.make(out)


def convolve_trunc(h: PiecewisePolyExp, w: PolyExpFunction,
                   lo: float, hi: float) -> PiecewisePolyExp:
    """x -> integral_lo^{min(x, hi)} h(y) w(x - y) dy.

    ``w`` is interpreted as a kernel supported on [0, inf) (zero for negative
    arguments); the result is zero for x <= lo.  ``hi = inf`` gives the
    running convolution with a shifted lower limit.
    """
    if w.is_zero or hi <= lo:
        return PiecewisePolyExp.zero()
    finite_hi = np.isfinite(hi)
    inner = [float(b) for b in h.breakpoints if lo < b < hi]
    cuts = [lo] + inner + ([hi] if finite_hi else [])
    # segment boundaries of the y-splitting; result breakpoints are the cuts
    seg_bounds = list(zip(cuts[:-1], cuts[1:])) + ([] if finite_hi else [(cuts[-1], np.inf)])

    pieces: list[PolyExpFunction] = [PolyExpFunction.zero()]  # x < lo
    full_acc = PolyExpFunction.zero()
    for (c, d) in seg_bounds:
        hp = h.piece_at(c if not np.isfinite(d) else 0.5 * (c + d), side="+")
        partial = PolyExpFunction.zero()
        for coeffs, r in hp.terms:
            partial = partial + _partial_piece_contrib(np.asarray(coeffs), r, w, c)
        pieces.append(full_acc + partial)
        if np.isfinite(d):
            for coeffs, r in hp.terms:
                full_acc = full_acc + _full_piece_contrib(
                    np.asarray(coeffs), r, w, c, d)
    if finite_hi:
        pieces.append(full_acc)  # x >= hi: all segments complete
    return PiecewisePolyExp(np.asarray(cuts), pieces)


def convolve_with_shift(h: PiecewisePolyExp, w: PolyExpFunction,
                        a: float) -> PiecewisePolyExp:
    """x -> integral_a^x h(y) w(x - y) dy (w supported on [0, inf))."""
    return convolve_trunc(h, w, a, np.inf)


def weighted_tail_integral(h: PiecewisePolyExp, rate: float,
                           start: float) -> float:
    """integral_0^inf e^{-rate*y} h(y + start) dy, exact.

    Requires every h-term rate r < rate on the unbounded piece (otherwise the
    integral diverges and DivergenceError is raised).
    """
    if rate <= 0:
        raise DivergenceError("tail weight rate must be positive")
    shifted = h.translate(-start)          # g(y) = h(y + start)
    g = shifted.multiply_exp(-rate)        # e^{-rate y} h(y + start)
    bp = [float(b) for b in g.breakpoints if b > 0.0]
    cuts = [0.0] + bp
    total = 0.0
    for c, d in zip(cuts, cuts[1:] + [np.inf]):
        piece = g.piece_at(c + 1.0 if not np.isfinite(d) else 0.5 * (c + d))
        if np.isfinite(d):
            total += piece.definite_integral(c, d)
        else:
            total += piece.tail_integral(c)
    return total
