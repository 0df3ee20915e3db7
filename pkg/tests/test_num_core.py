import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from qbwnn.errors import DomainError
from qbwnn.num_core import (
    Rng, gauss_cdf, gauss_pdf, make_quadrature, min_eig_ratio, rng_version, sample_chi,
    sample_gaussian, solve_psd, symmetry_error,
)


def test_gauss_pdf_values():
    assert gauss_pdf(0.0) == pytest.approx(0.3989422804014327, abs=1e-15)
    assert gauss_pdf(10.0) < 1e-22
    # mpmath npdf(1) at 40 digits
    assert gauss_pdf(1.0) == pytest.approx(0.24197072451914335, rel=1e-14)


def test_gauss_cdf_values():
    assert gauss_cdf(0.0) == 0.5
    # mpmath ncdf(1.959963985) = 0.97500000002688...
    assert gauss_cdf(1.959963985) == pytest.approx(0.9750000000268816, abs=1e-13)
    assert gauss_cdf(-0.7) == pytest.approx(1.0 - gauss_cdf(0.7), abs=1e-15)


def test_gauss_arrays_keep_shape():
    x = np.linspace(-3, 3, 12).reshape(3, 4)
    assert gauss_pdf(x).shape == (3, 4)
    assert gauss_cdf(x).shape == (3, 4)
    assert isinstance(gauss_cdf(0.3), float)


@given(st.floats(-8, 8))
def test_pdf_is_derivative_of_cdf(x):
    h = 1e-5
    fd = (gauss_cdf(x + h) - gauss_cdf(x - h)) / (2 * h)
    assert abs(fd - gauss_pdf(x)) < 1e-6


@given(st.floats(-30, 30), st.floats(0, 5))
def test_cdf_monotone(x, dx):
    assert gauss_cdf(x + dx) >= gauss_cdf(x)


def test_legendre_rule_two_nodes():
    q = make_quadrature("gauss-legendre", 2)
    assert_allclose(np.sort(q.nodes), [-1 / math.sqrt(3), 1 / math.sqrt(3)], atol=1e-15)
    assert_allclose(q.weights, [1.0, 1.0], atol=1e-15)


def test_hermite_second_moment():
    q = make_quadrature("gauss-hermite", 64)
    assert q.integrate(lambda x: x * x) == pytest.approx(math.sqrt(math.pi) / 2, abs=1e-12)


def test_jacobi_zero_is_legendre():
    a = make_quadrature("gauss-jacobi", 16, 0.0, 0.0)
    b = make_quadrature("gauss-legendre", 16)
    assert_allclose(np.sort(a.nodes), np.sort(b.nodes), atol=1e-12)


@pytest.mark.parametrize("kind,args", [("gauss-legendre", ()), ("gauss-hermite", ()),
                                       ("gauss-jacobi", (0.5, 0.5)), ("gauss-jacobi", (1.0, 0.0))])
def test_weights_sum_to_measure(kind, args):
    q = make_quadrature(kind, 24, *args)
    assert np.sum(q.weights) == pytest.approx(q.domain_measure(), rel=1e-13)


@pytest.mark.parametrize("n", [2, 5, 16, 64, 128])
def test_legendre_exact_for_monomials(n):
    q = make_quadrature("gauss-legendre", n)
    for p in range(0, 2 * n, max(1, (2 * n) // 12)):
        exact = 0.0 if p % 2 else 2.0 / (p + 1)
        got = q.integrate(lambda x: x ** p)
        assert abs(got - exact) <= 1e-12 * max(1.0, abs(exact))


def test_quadrature_doubling_converges():
    f = lambda x: np.exp(np.sin(3 * x))
    a = make_quadrature("gauss-legendre", 32).integrate(f)
    b = make_quadrature("gauss-legendre", 64).integrate(f)
    assert abs(a - b) < 1e-10


def test_quadrature_guards():
    with pytest.raises(DomainError):
        make_quadrature("gauss-legendre", 1)
    with pytest.raises(DomainError):
        make_quadrature("gauss-legendre", 10 ** 6)
    with pytest.raises(DomainError):
        make_quadrature("simpson", 8)


def test_rng_determinism_and_substreams():
    a = Rng(7).normal(1000)
    b = Rng(7).normal(1000)
    assert np.array_equal(a, b)
    s1 = Rng(7).substream("x").normal(1000)
    s2 = Rng(7).substream("y").normal(1000)
    assert not np.array_equal(s1, s2)
    assert abs(np.corrcoef(s1, s2)[0, 1]) < 0.15
    assert np.array_equal(Rng(7, ("x",)).normal(5), Rng(7).substream("x").normal(5))
    assert "Philox" in rng_version()


def test_sample_moments():
    g = sample_gaussian(Rng(1), 10 ** 6)
    assert abs(g.mean()) < 0.004
    assert abs(g.var() - 1.0) < 0.01
    k1 = sample_chi(Rng(2), 1, 10 ** 6)
    assert abs(k1.mean() - math.sqrt(2 / math.pi)) < 0.003
    k4 = sample_chi(Rng(3), 4, 10 ** 6)
    assert abs(np.mean(k4 ** 2) - 4.0) < 0.02
    with pytest.raises(DomainError):
        sample_chi(Rng(0), 0, 3)


def test_psd_helpers():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    assert symmetry_error(a) == 0.0
    assert min_eig_ratio(a) == pytest.approx(1 / 3)
    x = solve_psd(a, np.array([3.0, 3.0]))
    assert_allclose(x, [1.0, 1.0], atol=1e-14)
