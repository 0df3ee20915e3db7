import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from qbwnn import backend, quant
from qbwnn.errors import DomainError
from qbwnn.num_core import Rng


def test_boundaries_are_deterministic():
    w = quant.quantize(np.ones(1000), Rng(0))
    assert np.all(w == 1.0)
    w = quant.quantize(-np.ones(1000), Rng(0))
    assert np.all(w == -1.0)


def test_half_gives_three_quarters():
    w = quant.quantize(np.full(10 ** 6, 0.5), Rng(4))
    assert abs(np.mean(w == 1.0) - 0.75) < 4 * np.sqrt(0.75 * 0.25 / 1e6)


def test_zero_mean():
    w = quant.quantize(np.zeros(10 ** 6), Rng(5))
    assert abs(w.mean()) < 0.004


def test_mean_var():
    assert quant.quantize_mean_var(0.0) == (0.0, 1.0)
    assert quant.quantize_mean_var(1.0) == (1.0, 0.0)
    assert quant.quantize_mean_var(0.5) == (0.5, 0.75)


def test_entries_uncorrelated():
    w = np.stack([quant.quantize(np.zeros(2), Rng(0, ("corr", i))) for i in range(20000)])
    w2 = quant.quantize(np.zeros((10 ** 5, 2)), Rng(11))
    assert abs(np.corrcoef(w2[:, 0], w2[:, 1])[0, 1]) < 0.01
    assert abs(np.corrcoef(w[:, 0], w[:, 1])[0, 1]) < 0.04


def test_clamp_tolerance():
    buf = quant.check_buffer(np.array([1.0 + 5e-13, -1.0 - 5e-13]))
    assert list(buf) == [1.0, -1.0]
    with pytest.raises(DomainError):
        quant.check_buffer(np.array([1.0 + 1e-9]))
    with pytest.raises(DomainError):
        quant.check_buffer(np.array([np.nan]))


def test_deterministic_flag():
    w = quant.quantize(np.array([-0.3, 0.0, 0.2]), Rng(0), deterministic=True)
    assert list(w) == [-1.0, 1.0, 1.0]


def test_partitioning_does_not_change_draws():
    theta = Rng(3).uniform(-1, 1, 1000)
    key = 123456789
    whole = quant.quantize_with_key(theta, key, 0)
    parts = np.concatenate([quant.quantize_with_key(theta[:400], key, 0),
                            quant.quantize_with_key(theta[400:], key, 400)])
    assert np.array_equal(whole, parts)


@pytest.mark.skipif("cython" not in backend.available(), reason="compiled kernel not built")
def test_backends_bit_identical():
    theta = Rng(9).uniform(-1, 1, 50001)
    c, p = backend.get("cython"), backend.get("python")
    a, b = np.empty_like(theta), np.empty_like(theta)
    c.quantize_pm1(theta, 99, 17, a)
    p.quantize_pm1(theta, 99, 17, b)
    assert np.array_equal(a, b)
    assert np.array_equal(c.uniforms(99, 17, 1000), p.uniforms(99, 17, 1000))


def test_uniforms_range():
    u = backend.uniforms(5, 0, 10 ** 5)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005


@given(arrays(np.float64, st.integers(1, 64), elements=st.floats(-1, 1)), st.integers(0, 2 ** 32))
def test_output_is_pm1_and_respects_bounds(theta, seed):
    w = quant.quantize(theta, Rng(seed))
    assert set(np.unique(w)) <= {-1.0, 1.0}
    assert np.all(w[theta == 1.0] == 1.0)
    assert np.all(w[theta == -1.0] == -1.0)
    assert w.shape == theta.shape
