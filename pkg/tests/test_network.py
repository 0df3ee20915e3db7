import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from qbwnn import quasi
from qbwnn.errors import DataError, DomainError
from qbwnn.network import (
    BinarySample, ModelParams, check_good_init, draw_binary, forward_binary, forward_real,
    init_params, load_params, save_params,
)
from qbwnn.num_core import Rng


def micro(theta=1.0, w2=1.0, b1=0.0):
    return ModelParams(w0=np.array([[1.0], [0.0]]), b0=np.zeros(1), theta1=np.array([[theta]]),
                       b1=np.array([b1]), w2=np.array([w2]))


def test_init_uniform_variance():
    p = init_params((4, 1000, 1000), rng=Rng(0))
    assert abs(np.var(p.theta1) - 1 / 3) < 0.002
    assert p.var_theta == pytest.approx(1 / 3)
    assert np.all(np.abs(p.theta1) <= 1.0)
    assert not p.b0.any() and not p.b1.any() and p.b2 == 0.0


def test_init_scaled_uniform():
    p = init_params((4, 1000, 1000), theta_init="scaled-uniform", scale=0.3, rng=Rng(1))
    assert abs(np.var(p.theta1) - 0.03) < 0.0005
    assert p.var_theta == pytest.approx(0.03)
    with pytest.raises(DomainError):
        init_params((4, 4, 4), theta_init="scaled-uniform", scale=1.5)
    with pytest.raises(DomainError):
        init_params((0, 4, 4))


def test_w0_read_only():
    p = init_params((3, 5, 4), rng=Rng(2))
    with pytest.raises(ValueError):
        p.w0[0, 0] = 1.0
    q = p.copy()
    q.theta1[0, 0] = 0.123
    assert p.theta1[0, 0] != 0.123


def test_hand_evaluated_micro_network():
    p = micro()
    y, layers = forward_binary(p, BinarySample(np.array([[1.0]])), np.array([1.0, 0.0]))
    r = 1 / math.sqrt(2)
    assert layers.x1[0] == pytest.approx(r)
    assert layers.y1[0] == pytest.approx(r)
    assert y == pytest.approx(r)


def test_zero_output_weights():
    p = init_params((3, 6, 5), rng=Rng(3))
    p.theta1[:] = 1.0
    p.w2[:] = 0.0
    x = np.array([0.0, 0.6, 0.8])
    y, layers = forward_binary(p, draw_binary(p, Rng(0)), x)
    assert y == 0.0
    assert np.all(layers.x2 >= 0.0)


def test_real_equals_binary_for_sign_weights():
    p = init_params((3, 6, 5), rng=Rng(4))
    p.theta1[:] = np.sign(p.theta1)
    x = np.array([[0.0, 0.6, 0.8], [1.0, 0.0, 0.0]])
    yb, _ = forward_binary(p, draw_binary(p, Rng(0), deterministic=True), x)
    assert_allclose(forward_real(p, x), yb, rtol=0, atol=0)


@given(st.floats(0.1, 5.0), st.integers(0, 10 ** 6))
def test_homogeneous_in_w2(a, seed):
    p = init_params((3, 8, 6), rng=Rng(seed))
    x = np.array([0.0, 0.6, 0.8])
    s = draw_binary(p, Rng(seed, ("w1",)))
    q = p.copy()
    q.w2 *= a
    assert forward_binary(q, s, x)[0] == pytest.approx(a * forward_binary(p, s, x)[0], rel=1e-12, abs=1e-14)
    assert forward_real(q, x) == pytest.approx(a * forward_real(p, x), rel=1e-12, abs=1e-14)


def test_inputs_must_be_unit_norm():
    p = init_params((3, 4, 4), rng=Rng(0))
    with pytest.raises(DomainError):
        forward_real(p, np.array([1.0, 1.0, 0.0]))
    with pytest.raises(DomainError):
        forward_real(p, np.array([1.0, 0.0]))


def test_good_init():
    p = init_params((4, 10 ** 5, 8), rng=Rng(5))
    rep = check_good_init(p, tol=0.05, max_neurons=8)
    assert rep.gram_residual < 0.02
    assert rep.third_moment == pytest.approx(math.sqrt(8 / math.pi), abs=0.02)
    assert rep.weighted_residual < 0.05
    assert rep.passed
    small = check_good_init(init_params((4, 20, 4), rng=Rng(0)), tol=0.05)
    assert not small.passed


def test_binary_mean_matches_quasi():
    # sampled binary outputs average to the exact-variance quasi output
    p = init_params((8, 1600, 16), rng=Rng(6))
    x = np.eye(8)[0]
    mc = quasi.mc_forward_stats(p, x, 10 ** 4, Rng(7), keep_y1=False)
    ybar = quasi.propagate_moments(p, x, "exact").ybar
    assert abs(mc.mean - ybar) < 4 * math.sqrt(mc.var / mc.n)


def test_checkpoint_round_trip(tmp_path):
    p = init_params((3, 5, 4), rng=Rng(8), n_out=2)
    path = tmp_path / "p.npz"
    save_params(p, path)
    q = load_params(path)
    assert q.fingerprint() == p.fingerprint()
    assert q.dims == p.dims and q.n_out == 2
    (tmp_path / "bad.npz").write_bytes(b"not a checkpoint")
    with pytest.raises(DataError):
        load_params(tmp_path / "bad.npz")
