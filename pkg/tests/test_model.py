import numpy as np
import pytest
from scipy.optimize import brentq

from levy_restock.model import (
    LevyModel,
    DegenerateRootError,
    laplace_exponent,
    psi_derivative,
    phi,
    all_roots,
)

# base study model: unit drift, unit volatility, one exponential jump term
MODEL = LevyModel(delta=1.0, sigma=1.0, jumps=((0.2, 1.0),))
BV_MODEL = LevyModel(delta=1.0, sigma=0.0, jumps=((0.2, 1.0),))
BM = LevyModel(delta=0.5, sigma=1.0)


def test_laplace_exponent_base_model():
    # direct substitution: 1 + 1/2 + 0.2*(1/2 - 1) = 1.4
    assert laplace_exponent(MODEL, 1.0) == pytest.approx(1.4, abs=1e-14)


def test_laplace_exponent_at_zero():
    for m in (MODEL, BV_MODEL, BM):
        assert laplace_exponent(m, 0.0) == 0.0


def test_laplace_exponent_pure_brownian():
    assert laplace_exponent(BM, 2.0) == pytest.approx(3.0, abs=1e-14)


def test_psi_derivative_at_zero_is_mean():
    # delta - eta/beta = 1 - 0.2 = 0.8; cross-check by central difference
    assert psi_derivative(MODEL, 0.0) == pytest.approx(0.8, abs=1e-12)
    h = 1e-6
    fd = (laplace_exponent(MODEL, h) - laplace_exponent(MODEL, 0.0)) / h
    # one-sided at 0 (psi defined on s >= 0 and smooth), O(h) accurate
    assert psi_derivative(MODEL, 0.0) == pytest.approx(fd, abs=1e-5)
    assert MODEL.mean_rate == pytest.approx(0.8, abs=1e-12)


def test_psi_derivative_examples():
    assert psi_derivative(BM, 0.0) == pytest.approx(0.5, abs=1e-14)
    # symbolic: 1 + s - 0.2/(1+s)^2 at s=1
    assert psi_derivative(MODEL, 1.0) == pytest.approx(1.95, abs=1e-14)
    h = 1e-6
    fd = (laplace_exponent(MODEL, 1.0 + h) - laplace_exponent(MODEL, 1.0 - h)) / (2 * h)
    assert psi_derivative(MODEL, 1.0) == pytest.approx(fd, abs=1e-7)


@pytest.mark.parametrize("q", [0.05, 2.05])
def test_phi_matches_independent_root(q):
    oracle = brentq(lambda s: laplace_exponent(MODEL, s) - q, 1e-12, 50.0,
                    xtol=1e-14)
    assert phi(MODEL, q) == pytest.approx(oracle, abs=1e-10)
    assert abs(laplace_exponent(MODEL, phi(MODEL, q)) - q) <= 1e-12 * max(1.0, q)


def test_phi_anchor_values():
    assert phi(MODEL, 0.05) == pytest.approx(0.05946, abs=1e-4)
    assert phi(MODEL, 2.05) == pytest.approx(1.3085, abs=1e-3)


def test_phi_pure_brownian_sqrt():
    m = LevyModel(delta=0.0, sigma=np.sqrt(2.0))
    assert phi(m, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_all_roots_base_model():
    rs = all_roots(MODEL, 0.05)
    assert rs.phi_q == pytest.approx(0.05946, abs=1e-4)
    assert len(rs.neg_roots) == 2
    for r in rs.all:
        assert abs(laplace_exponent(MODEL, r) - 0.05) < 1e-10


def test_all_roots_pure_brownian():
    m = LevyModel(delta=0.0, sigma=np.sqrt(2.0))
    rs = all_roots(m, 1.0)
    assert rs.phi_q == pytest.approx(1.0, abs=1e-12)
    assert rs.neg_roots == pytest.approx((-1.0,), abs=1e-12)


def test_all_roots_large_q():
    rs = all_roots(MODEL, 12.05)
    assert rs.phi_q == pytest.approx(4.042, abs=2e-3)


def test_all_roots_bv_count():
    rs = all_roots(BV_MODEL, 0.05)
    assert len(rs.neg_roots) == 1


def test_psi_convexity_on_grid():
    s = np.linspace(0.0, 5.0, 101)
    vals = laplace_exponent(MODEL, s)
    for i in range(1, 100):
        chord = vals[i - 1] + (vals[i + 1] - vals[i - 1]) * 0.5
        assert vals[i] <= chord + 1e-12


def test_phi_strictly_increasing():
    qs = np.linspace(0.01, 5.0, 40)
    phis = [phi(MODEL, q) for q in qs]
    assert np.all(np.diff(phis) > 0)


def test_partial_fraction_mass_at_zero():
    # sigma > 0: sum over roots of 1/psi'(r) = W(0) = 0
    rs = all_roots(MODEL, 0.05)
    total = sum(1.0 / psi_derivative(MODEL, r) for r in rs.all)
    assert abs(total) < 1e-12
    # sigma = 0: the atom is 1/delta
    rs_bv = all_roots(BV_MODEL, 0.05)
    total_bv = sum(1.0 / psi_derivative(BV_MODEL, r) for r in rs_bv.all)
    assert total_bv == pytest.approx(1.0 / BV_MODEL.delta, rel=1e-12)


def test_root_recomposition():
    q = 0.05
    rs = all_roots(MODEL, q)
    lead = 0.5 * MODEL.sigma**2
    s = np.linspace(0.0, 2 * rs.phi_q, 50)
    recomposed = lead * np.prod([s - r for r in rs.all], axis=0)
    for _, beta in MODEL.jumps:
        recomposed = recomposed / (s + beta)
    direct = laplace_exponent(MODEL, s) - q
    assert np.allclose(recomposed, direct, rtol=1e-9, atol=1e-12)


def test_degenerate_roots_raise():
    # two nearly identical jump terms force a near-collision of roots
    m = LevyModel(delta=1.0, sigma=1.0, jumps=((0.2, 1.0), (0.2, 1.0 + 1e-13)))
    with pytest.raises(DegenerateRootError):
        all_roots(m, 0.05)


def test_invalid_models_rejected():
    with pytest.raises(ValueError):
        LevyModel(delta=1.0, sigma=-1.0)
    with pytest.raises(ValueError):
        LevyModel(delta=0.0, sigma=0.0, jumps=((0.2, 1.0),))
    with pytest.raises(ValueError):
        LevyModel(delta=1.0, sigma=1.0, jumps=((0.2, -1.0),))


def test_pole_errors():
    with pytest.raises(ZeroDivisionError):
        laplace_exponent(MODEL, -1.0)
    with pytest.raises(ZeroDivisionError):
        psi_derivative(MODEL, -1.0)
