"""Spectrally negative Levy model with hyperexponential downward jumps.

The net inventory flow is ``X(t) = x - D(t)`` where the demand ``D`` has only
upward jumps, so ``X`` is spectrally negative.  The jump part is restricted to
finite mixtures of exponentials; for that class the Laplace exponent is a
rational function and every scale-function kernel downstream has an exact
polynomial-times-exponential form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LevyModel",
    "RootSet",
    "DegenerateRootError",
    "laplace_exponent",
    "psi_derivative",
    "phi",
    "all_roots",
]

_ROOT_SEP_TOL = 1e-9
_PSI_RESIDUAL_TOL = 1e-12


class DegenerateRootError(ValueError):
    """Two roots of psi(s) = q collided; downstream partial fractions assume
    simple poles.  Perturb the jump rates (beta) slightly to separate them."""


@dataclass(frozen=True)
class LevyModel:
    """Drift / Brownian / hyperexponential-jump triplet.

    Levy measure: ``mu(dz) = sum_j eta_j * beta_j * exp(beta_j z) dz`` on z < 0.
    ``delta`` is the bounded-variation drift; with ``sigma > 0`` the process has
    unbounded variation but the Laplace exponent below is unchanged.
    """

    delta: float
    sigma: float = 0.0
    jumps: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "jumps", tuple((float(e), float(b)) for e, b in self.jumps))
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        for eta, beta in self.jumps:
            if eta < 0:
                raise ValueError("jump arrival rate eta must be >= 0")
            if beta <= 0:
                raise ValueError("jump decay rate beta must be > 0")
        if self.sigma == 0 and self.delta <= 0:
            raise ValueError("with sigma = 0 the drift delta must be > 0 "
                             "(process must not be the negative of a subordinator)")
        # Exponential moments of the jump tail exist up to min_j beta_j; assert a
        # representative theta strictly inside that range is finite.
        if self.jumps:
            theta = 0.5 * min(b for _, b in self.jumps)
            if not np.isfinite(self._jump_exp_moment(theta)):
                raise ValueError("jump tail lacks exponential moments")

    def _jump_exp_moment(self, theta: float) -> float:
        # integral over z <= -1 of e^{theta |z|} mu(dz), finite iff theta < beta_j
        total = 0.0
        for eta, beta in self.jumps:
            if theta >= beta:
                return np.inf
            total += eta * beta * np.exp(-(beta - theta)) / (beta - theta)
        return total

    @property
    def mean_rate(self) -> float:
        """E[X(1)] = psi'(0+)."""
        return psi_derivative(self, 0.0)

    @property
    def is_bounded_variation(self) -> bool:
        return self.sigma == 0.0

    @property
    def min_beta(self) -> float:
        return min((b for _, b in self.jumps), default=np.inf)

    @classmethod
    def from_dict(cls, d: dict) -> "LevyModel":
        jumps = tuple((j["eta"], j["beta"]) for j in d.get("jumps", []))
        return cls(delta=float(d["delta"]), sigma=float(d.get("sigma", 0.0)), jumps=jumps)


@dataclass(frozen=True)
class RootSet:
    """All real solutions of psi(s) = q: the positive root phi_q and the
    negative roots (all simple)."""

    q: float
    phi_q: float
    neg_roots: tuple[float, ...]

    @property
    def all(self) -> np.ndarray:
        return np.array((self.phi_q,) + self.neg_roots)


def laplace_exponent(m: LevyModel, s) -> float:
    """psi(s) = delta*s + sigma^2 s^2 / 2 + sum_j eta_j (beta_j/(beta_j+s) - 1).

    Analytic continuation to s > -min_j beta_j is permitted (used by the root
    finder); evaluation at a pole s = -beta_j raises.
    """
    s = np.asarray(s, dtype=float)
    out = m.delta * s + 0.5 * m.sigma**2 * s * s
    for eta, beta in m.jumps:
        if np.any(beta + s == 0.0):
            raise ZeroDivisionError(f"psi has a pole at s = {-beta}")
        out = out + eta * (beta / (beta + s) - 1.0)
    return float(out) if out.ndim == 0 else out


def psi_derivative(m: LevyModel, s) -> float:
    """Exact derivative of the Laplace exponent; psi'(0+) = E[X(1)]."""
    s = np.asarray(s, dtype=float)
    out = m.delta + m.sigma**2 * s
    for eta, beta in m.jumps:
        if np.any(beta + s == 0.0):
            raise ZeroDivisionError(f"psi' has a pole at s = {-beta}")
        out = out - eta * beta / (beta + s) ** 2
    return float(out) if out.ndim == 0 else out


def phi(m: LevyModel, q: float) -> float:
    """Right inverse of psi at q > 0: the unique s > 0 with psi(s) = q.

    Bracketed bisection; psi is convex with psi(0) = 0 and psi(inf) = inf, so
    the positive root exists and is unique for q > 0.
    """
    if q <= 0:
        raise ValueError("phi requires q > 0")
    hi = 1.0
    while laplace_exponent(m, hi) < q:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("failed to bracket phi(q)")
    lo = 0.0
    root = _bisect(lambda s: laplace_exponent(m, s) - q, lo, hi)
    if abs(laplace_exponent(m, root) - q) > _PSI_RESIDUAL_TOL * max(1.0, q):
        raise RuntimeError("phi(q) residual above tolerance")
    return root


def _bisect(f, lo: float, hi: float, iters: int = 200) -> float:
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise ValueError("bisection bracket does not straddle a sign change")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if fmid == 0.0:
            return mid
        if flo * fmid < 0:
            hi = mid
        else:
            lo, flo = mid, fmid
        if hi - lo <= 1e-15 * max(1.0, abs(lo), abs(hi)):
            break
    return 0.5 * (lo + hi)


def _cleared_polynomial(m: LevyModel, q: float) -> np.ndarray:
    """Coefficients (ascending) of (psi(s) - q) * prod_j (beta_j + s)."""
    # base: (delta*s + sigma^2/2 s^2 - q - sum eta_j) * prod(beta_j + s)
    base = np.array([-q - sum(e for e, _ in m.jumps), m.delta, 0.5 * m.sigma**2])
    base = np.trim_zeros(base, "b")
    prod_all = np.array([1.0])
    for _, beta in m.jumps:
        prod_all = np.polynomial.polynomial.polymul(prod_all, np.array([beta, 1.0]))
    poly = np.polynomial.polynomial.polymul(base, prod_all)
    for j, (eta, beta) in enumerate(m.jumps):
        prod_others = np.array([eta * beta])
        for k, (_, beta_k) in enumerate(m.jumps):
            if k != j:
                prod_others = np.polynomial.polynomial.polymul(
                    prod_others, np.array([beta_k, 1.0]))
        poly = np.polynomial.polynomial.polyadd(poly, prod_others)
    return poly


def all_roots(m: LevyModel, q: float) -> RootSet:
    """All real roots of psi(s) = q via the cleared polynomial.

    For sigma > 0 with J jump terms there are exactly J + 2 simple real roots
    (one positive); for sigma = 0 there are J + 1.  Each root is polished by
    bisection on psi(s) - q between sign changes and checked to satisfy
    |psi(r) - q| <= 1e-10 * max(1, q).
    """
    if q <= 0:
        raise ValueError("all_roots requires q > 0")
    betas = sorted(b for _, b in m.jumps)
    for b1, b2 in zip(betas, betas[1:]):
        if b2 - b1 < _ROOT_SEP_TOL:
            raise DegenerateRootError(
                "two jump decay rates closer than 1e-9 collapse the pole "
                "structure; merge the terms or perturb one beta")
    poly = _cleared_polynomial(m, q)
    raw = np.polynomial.polynomial.polyroots(poly)
    real = np.sort(np.real(raw[np.abs(np.imag(raw)) < 1e-7 * (1 + np.abs(raw))]))
    expected = len(m.jumps) + (2 if m.sigma > 0 else 1)
    if len(real) != expected:
        raise DegenerateRootError(
            f"expected {expected} real roots of psi(s)=q, found {len(real)}")
    if np.min(np.diff(real), initial=np.inf) < _ROOT_SEP_TOL:
        raise DegenerateRootError(
            "two roots of psi(s)=q closer than 1e-9; perturb the jump "
            "parameters to separate them")
    for r in real:
        if any(abs(r + b) < _ROOT_SEP_TOL for b in betas):
            raise DegenerateRootError(
                "a root of psi(s)=q sits within 1e-9 of a pole; perturb the "
                "jump parameters")

    # polish each root on a bracket free of poles
    poles = sorted(-b for _, b in m.jumps)
    polished = []
    for r in real:
        width = 0.45 * min(
            [abs(r - p) for p in poles if abs(r - p) > 0] + [1.0, _gap(real, r)])
        lo, hi = r - width, r + width
        g = lambda s: laplace_exponent(m, s) - q
        if g(lo) * g(hi) < 0:
            r = _bisect(g, lo, hi)
        polished.append(r)
    polished = np.array(polished)

    for r in polished:
        if abs(laplace_exponent(m, r) - q) > 1e-10 * max(1.0, q):
            raise RuntimeError("root residual above tolerance")
    pos = polished[polished > 0]
    neg = polished[polished < 0]
    if len(pos) != 1:
        raise RuntimeError("expected exactly one positive root")
    return RootSet(q=q, phi_q=float(pos[0]), neg_roots=tuple(neg.tolist()))


def _gap(sorted_vals: np.ndarray, r: float) -> float:
    others = sorted_vals[sorted_vals != r]
    if len(others) == 0:
        return 1.0
    return float(np.min(np.abs(others - r)))
