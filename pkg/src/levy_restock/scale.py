"""Scale-function family of the model and every derived kernel.

For rational Laplace exponents the scale function is a plain sum of
exponentials over the roots of ``psi(s) = q`` (partial fractions), so the
whole family (running integrals, the exponentially tilted second scale
function, the two-parameter kernels entering barrier-cost formulas) lives in
the exact poly-exp algebra.

Two-parameter kernels are assembled through the additive identity

    scrW_b(x, y) = W_q(x - y) + lam * int_y^b W_q(x - u) W_{q+lam}(u - y) du

rather than the subtractive definition (boosted kernel minus a tail
correction): slightly above ``b`` the subtractive form cancels
catastrophically while the additive one stays well-scaled.  The subtractive
form is kept in the test suite as an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import LevyModel, RootSet, all_roots, phi, psi_derivative
from .polyexp import (
    PiecewisePolyExp,
    PolyExpFunction,
    convolve_trunc,
    convolve_with_shift,
)

__all__ = ["ScaleSet", "KernelSet", "build_scale_set",
           "rho", "script_kernels", "h_kernel", "k_kernel"]


@dataclass(frozen=True)
class ScaleSet:
    """W, its running integrals, and Z at one discount level."""

    q: float
    phi_q: float
    roots: RootSet
    w_fn: PolyExpFunction          # expression of W on [0, inf)
    w: PiecewisePolyExp            # W, zero below 0
    w_bar: PiecewisePolyExp        # int_0^x W
    w_bar_bar: PiecewisePolyExp    # int_0^x w_bar
    z: PiecewisePolyExp            # 1 + q * w_bar
    z_bar: PiecewisePolyExp        # int_0^x Z (= x below 0)

    def w_prime_at_zero(self) -> float:
        """Right derivative W'(0+) = sum_r r / psi'(r)."""
        return float(self.w_fn.derivative()(0.0))


def build_scale_set(m: LevyModel, q: float) -> ScaleSet:
    """Partial-fraction scale function W(x) = sum_roots e^{rx} / psi'(r)."""
    roots = all_roots(m, q)
    w_fn = PolyExpFunction.make(
        [((1.0 / psi_derivative(m, r),), r) for r in roots.all])
    w = PiecewisePolyExp.from_function_on(w_fn, 0.0)
    w_bar = w.antiderivative(0.0)
    w_bar_bar = w_bar.antiderivative(0.0)
    z = w_bar.scale(q).add_const(1.0)
    z_bar = z.antiderivative(0.0)
    return ScaleSet(q=q, phi_q=roots.phi_q, roots=roots, w_fn=w_fn, w=w,
                    w_bar=w_bar, w_bar_bar=w_bar_bar, z=z, z_bar=z_bar)


class KernelSet:
    """Scale sets at rates q and q + lam plus the tilted kernels keyed off
    phi(q); caches the two-parameter kernels per (a, b), since the barrier
    search revisits thousands of pairs."""

    def __init__(self, model: LevyModel, q: float, lam: float):
        if q <= 0 or lam <= 0:
            raise ValueError("q and lam must be positive")
        self.model = model
        self.q = q
        self.lam = lam
        self.base = build_scale_set(model, q)
        self.boosted = build_scale_set(model, q + lam)
        self.phi_q = self.base.phi_q
        self.phi_q_lam = self.boosted.phi_q
        self.psi_prime_zero = psi_derivative(model, 0.0)
        # Theta(x) = 1 + lam * int_0^x e^{-phi_q z} W_{q+lam}(z) dz  (=1, x<=0)
        tilted = self.boosted.w.multiply_exp(-self.phi_q)
        self.theta = tilted.antiderivative(0.0).scale(lam).add_const(1.0)
        # second scale function: e^{phi_q x} * Theta(x)
        self.z_second = self.theta.multiply_exp(self.phi_q)
        self._cache: dict = {}

    # -- level helpers -------------------------------------------------------
    def level(self, boosted: bool) -> ScaleSet:
        return self.boosted if boosted else self.base

    def rho(self, a: float, h: PiecewisePolyExp,
            boosted: bool = True) -> PiecewisePolyExp:
        """x -> int_a^x h(y) W(x - y) dy at the requested discount level."""
        return convolve_with_shift(h, self.level(boosted).w_fn, a)

    # -- two-parameter kernels ----------------------------------------------
    def _scripted(self, name: str, b: float, y: float) -> PiecewisePolyExp:
        key = (name, b, y)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        base_pw, boost_pw = {
            "w": (self.base.w, self.boosted.w),
            "z": (self.base.z, self.boosted.z),
            "w_bar": (self.base.w_bar, self.boosted.w_bar),
            "z_bar": (self.base.z_bar, self.boosted.z_bar),
        }[name]
        out = base_pw.translate(y) + convolve_trunc(
            boost_pw.translate(y), self.base.w_fn, y, b).scale(self.lam)
        self._cache[key] = out
        return out

    def scr_w(self, b: float, y: float) -> PiecewisePolyExp:
        return self._scripted("w", b, y)

    def scr_z(self, b: float, y: float) -> PiecewisePolyExp:
        return self._scripted("z", b, y)

    def scr_w_bar(self, b: float, y: float) -> PiecewisePolyExp:
        return self._scripted("w_bar", b, y)

    def scr_z_bar(self, b: float, y: float) -> PiecewisePolyExp:
        return self._scripted("z_bar", b, y)

    def h_kernel(self, b: float, a: float,
                 h: PiecewisePolyExp) -> PiecewisePolyExp:
        """x -> H_b(x, a; h): the running-cost kernel for payoff h."""
        if not a < b:
            raise ValueError("need a < b")
        lam, q = self.lam, self.q
        rho_a_boost = self.rho(a, h, boosted=True)
        rho_b_base = convolve_with_shift(h, self.base.w_fn, b)
        # int_a^b h(y) scrW_b(x, y) dy collapses (Fubini) to a single
        # truncated convolution of h + lam * rho against the base kernel
        mid = convolve_trunc(h + rho_a_boost.scale(lam), self.base.w_fn, a, b)
        tail = self.base.z.translate(b).scale(lam / q * rho_a_boost(b))
        return rho_b_base + mid + tail

    def k_kernel(self, b: float, a: float) -> PiecewisePolyExp:
        """x -> K_b(x, a): the exit-weight kernel."""
        if not a < b:
            raise ValueError("need a < b")
        lam, q = self.lam, self.q
        z_ba = self.boosted.z(b - a)
        return (self.scr_z(b, a).scale(q / ((lam + q) * z_ba))
                + self.base.z.translate(b).scale(lam / (lam + q)))


# ---- module-level operation wrappers ---------------------------------------

def rho(ks: KernelSet, a: float, h: PiecewisePolyExp,
        boosted: bool = True) -> PiecewisePolyExp:
    return ks.rho(a, h, boosted=boosted)


def script_kernels(ks: KernelSet, b: float, y: float):
    """(scrW, scrZ, scrWbar, scrZbar) as functions of x for fixed (b, y)."""
    return (ks.scr_w(b, y), ks.scr_z(b, y), ks.scr_w_bar(b, y),
            ks.scr_z_bar(b, y))


def h_kernel(ks: KernelSet, b: float, a: float, h: PiecewisePolyExp):
    return ks.h_kernel(b, a, h)


def k_kernel(ks: KernelSet, b: float, a: float):
    return ks.k_kernel(b, a)
