import math

import numpy as np
import pytest
from scipy import integrate, stats

from l2contract.priors import HalfCauchy, InverseGamma, PointMass, Tabulated, make_prior
from l2contract.stat_core import make_rng


@pytest.mark.parametrize("spec", [InverseGamma(1.0, 1.0), InverseGamma(3.0, 0.5),
                                  InverseGamma(0.5, 2.0), HalfCauchy(1.0), HalfCauchy(0.2)])
def test_density_integrates_to_one(spec):
    assert spec.total_mass() == pytest.approx(1.0, abs=1e-4)


def test_inverse_gamma_against_scipy():
    spec = InverseGamma(2.5, 0.7)
    ref = stats.invgamma(2.5, scale=0.7)
    s = np.geomspace(1e-3, 1e3, 40)
    np.testing.assert_allclose(spec.pdf(s), ref.pdf(s), rtol=1e-10, atol=1e-300)
    np.testing.assert_allclose(spec.cdf(s), ref.cdf(s), rtol=1e-10, atol=1e-300)
    np.testing.assert_allclose(spec.sf(s), ref.sf(s), rtol=1e-10, atol=1e-300)
    q = np.linspace(0.01, 0.99, 9)
    np.testing.assert_allclose(spec.ppf(q), ref.ppf(q), rtol=1e-10)


def test_half_cauchy_against_scipy():
    spec = HalfCauchy(1.7)
    ref = stats.halfcauchy(scale=1.7)
    s = np.geomspace(1e-3, 1e3, 40)
    np.testing.assert_allclose(spec.pdf(s), ref.pdf(s), rtol=1e-12)
    np.testing.assert_allclose(spec.cdf(s), ref.cdf(s), rtol=1e-12)
    np.testing.assert_allclose(spec.sf(s), ref.sf(s), rtol=1e-10)


@pytest.mark.parametrize("spec", [InverseGamma(2.0, 1.5), HalfCauchy(0.8)])
def test_derivative_matches_finite_difference(spec):
    s = np.geomspace(0.05, 20, 25)
    h = 1e-6 * s
    fd = (spec.pdf(s + h) - spec.pdf(s - h)) / (2 * h)
    np.testing.assert_allclose(spec.dpdf(s), fd, rtol=1e-5, atol=1e-10)


def test_sampler_matches_cdf():
    rng = make_rng(1)
    spec = InverseGamma(2.0, 1.0)
    x = spec.rvs(rng, 20_000)
    assert stats.kstest(x, spec.cdf).pvalue > 1e-3
    hc = HalfCauchy(1.0)
    assert stats.kstest(hc.rvs(rng, 20_000), hc.cdf).pvalue > 1e-3


def _triangle(n=201):
    grid = np.linspace(0.0, 2.0, n)
    dens = np.maximum(0.0, 1.0 - np.abs(grid - 1.0))
    return grid, dens


def test_tabulated_cdf_and_ppf():
    grid, dens = _triangle()
    spec = Tabulated(grid, dens)
    s = np.linspace(0.0, 2.0, 33)
    exact = np.where(s <= 1, s ** 2 / 2, 1 - (2 - s) ** 2 / 2)
    np.testing.assert_allclose(spec.cdf(s), exact, atol=1e-12)
    q = np.linspace(0.0, 1.0, 21)
    np.testing.assert_allclose(spec.cdf(spec.ppf(q)), q, atol=1e-12)
    assert spec.lipschitz() == pytest.approx(1.0)


def test_tabulated_validation():
    grid, dens = _triangle()
    with pytest.raises(ValueError, match="resolution"):
        Tabulated(grid[::10], dens[::10])
    with pytest.raises(ValueError, match="integrates"):
        Tabulated(grid, 2 * dens)
    with pytest.raises(ValueError):
        Tabulated(grid[::-1], dens)
    spike = np.zeros_like(dens)
    spike[100] = 1.0 / (grid[1] - grid[0])
    with pytest.raises(ValueError, match="resolution"):
        Tabulated(grid, spike)


def test_point_mass():
    pm = PointMass(2.0)
    assert pm.cdf(1.9) == 0.0 and pm.cdf(2.0) == 1.0
    assert pm.rvs(make_rng(0)) == 2.0
    with pytest.raises(ValueError):
        PointMass(0.0)


def test_make_prior():
    assert make_prior("inverse_gamma", a=1.0, b=2.0) == InverseGamma(1.0, 2.0)
    assert make_prior("half_cauchy", r=3.0) == HalfCauchy(3.0)
    with pytest.raises(ValueError, match="unknown"):
        make_prior("lognormal", mu=0.0)
    with pytest.raises(ValueError):
        InverseGamma(-1.0, 1.0)


def test_half_cauchy_tail_product_limit():
    spec = HalfCauchy(1.0)
    t = np.geomspace(1e2, 1e8, 7)
    # t * (2/pi) atan(1/t) -> 2/pi
    np.testing.assert_allclose(t * spec.sf(t), 2 / math.pi, rtol=1e-4)
    # quadrature oracle for the survival function
    tail = integrate.quad(lambda s: float(spec.pdf(s)), 50.0, np.inf)[0]
    assert spec.sf(50.0) == pytest.approx(tail, rel=1e-8)
