"""The quasi network: moment propagation through the quantized layer.

Conditioned on the real parameters, a hidden pre-activation of the binary
network is a sum of d1 independent terms, so it is close to N(nu, s^2) with

    nu_j  = sqrt(c / d1) sum_i theta_ij x1_i + beta b1_j
    s_j^2 = (c / d1) sum_i (1 - theta_ij^2) x1_i^2

("exact" mode).  For large d1 the variance concentrates on the scalar
(c / d)(1 - Var[theta]) ("limit" mode).  Pushing the Gaussian through the ReLU
gives the smooth activation

    psi(nu) = s phi(nu / s) + nu Phi(nu / s),   psi'(nu) = Phi(nu / s),

and the expected network output ybar = w2 . psi(nu) / sqrt(d2) + b2.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import DomainError
from .network import check_inputs, first_layer
from .num_core import gauss_cdf, gauss_pdf
from . import quant

MODES = ("limit", "exact")


def tilde_varsigma_sq(c, d, var_theta):
    """Limit variance (c / d)(1 - Var[theta]) of a hidden pre-activation."""
    if not 0.0 <= var_theta <= 1.0:
        raise DomainError("var_theta must lie in [0, 1]")
    if d < 1 or not c > 0.0:
        raise DomainError("need d >= 1 and c > 0")
    return float(c) / float(d) * (1.0 - float(var_theta))


def _check_sigma(varsigma):
    s = np.asarray(varsigma, dtype=np.float64)
    if np.any(~(s > 0.0)):
        raise DomainError("varsigma must be positive (use relu for the degenerate limit)")
    return s


def quasi_act(nu, varsigma):
    """psi(nu) = s phi(nu/s) + nu Phi(nu/s); always >= max(nu, 0)."""
    s = _check_sigma(varsigma)
    nu_a = np.asarray(nu, dtype=np.float64)
    r = nu_a / s
    val = s * gauss_pdf(r) + nu_a * gauss_cdf(r)
    val = np.maximum(val, np.maximum(nu_a, 0.0))
    return float(val) if np.ndim(val) == 0 else val


def quasi_act_grad(nu, varsigma):
    """psi'(nu) = Phi(nu/s)."""
    s = _check_sigma(varsigma)
    val = gauss_cdf(np.asarray(nu, dtype=np.float64) / s)
    return float(val) if np.ndim(val) == 0 else val


def relu_moments(nu, varsigma):
    """Mean and variance of max(Y, 0) for Y ~ N(nu, varsigma^2).

    With r = nu/s, g = phi(r), p = Phi(r):
        mean = s g + nu p
        var  = (s^2 + nu^2) p + nu s g - mean^2
    The mean is clamped to at least max(nu, 0) and the variance to at least 0,
    which only removes rounding noise.
    """
    s = _check_sigma(varsigma)
    nu_a = np.asarray(nu, dtype=np.float64)
    mean, var = _moments(nu_a, s)
    if np.ndim(mean) == 0:
        return float(mean), float(var)
    return mean, var


def _moments(nu, s):
    r = nu / s
    g = gauss_pdf(r)
    p = gauss_cdf(r)
    h = g + r * p  # E[max(Z + r, 0)]
    mean = np.maximum(s * h, np.maximum(nu, 0.0))
    var = np.maximum(s * s * (p + r * h - h * h), 0.0)
    return mean, var


def _moments_safe(nu, s2):
    """relu_moments that treats zero variance as the exact ReLU."""
    nu = np.asarray(nu, dtype=np.float64)
    s2 = np.broadcast_to(np.asarray(s2, dtype=np.float64), nu.shape)
    mean = np.maximum(nu, 0.0)
    var = np.zeros_like(nu)
    pos = s2 > 0.0
    if np.any(pos):
        m, v = _moments(nu[pos], np.sqrt(s2[pos]))
        mean[pos], var[pos] = m, v
    return mean, var


def _act_safe(nu, s2):
    """(psi, psi') with the exact ReLU and its step where the variance is 0."""
    nu = np.asarray(nu, dtype=np.float64)
    s2 = np.broadcast_to(np.asarray(s2, dtype=np.float64), nu.shape)
    psi = np.maximum(nu, 0.0)
    dpsi = (nu > 0.0).astype(np.float64)
    pos = s2 > 0.0
    if np.any(pos):
        s = np.sqrt(s2[pos])
        r = nu[pos] / s
        psi[pos] = np.maximum(s * gauss_pdf(r) + nu[pos] * gauss_cdf(r), psi[pos])
        dpsi[pos] = gauss_cdf(r)
    return psi, dpsi


@dataclass
class MomentState:
    """Per-input conditional moments of the hidden layer and output.

    Arrays have a leading batch axis unless the state was built from a single
    input vector.  ``x1`` is kept so that the backward pass does not redo the
    projection.
    """

    nu1: np.ndarray
    varsigma1_sq: np.ndarray
    mu2: np.ndarray
    sigma2_sq: np.ndarray
    ybar: np.ndarray
    mode: str
    x1: np.ndarray


def propagate_moments(params, x, mode="limit"):
    """Forward pass of the quasi network for one input or a batch."""
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}")
    x2d, single = check_inputs(x)
    d, d1, d2 = params.dims
    x1 = first_layer(params, x2d)
    nu = math.sqrt(params.c / d1) * (x1 @ params.theta1) + params.beta * params.b1
    if mode == "exact":
        s2 = (params.c / d1) * ((x1 * x1) @ (1.0 - params.theta1 ** 2))
    else:
        s2 = np.full_like(nu, tilde_varsigma_sq(params.c, d, params.var_theta))
    mu2, sig2 = _moments_safe(nu, s2)
    ybar = mu2 @ params.w2 / math.sqrt(d2) + params.b2
    if single:
        nu, s2, mu2, sig2, ybar, x1 = nu[0], s2[0], mu2[0], sig2[0], ybar[0], x1[0]
        if np.ndim(ybar) == 0:
            ybar = float(ybar)
    return MomentState(nu, s2, mu2, sig2, ybar, mode, x1)


@dataclass
class QuasiGrad:
    """Gradients with respect to the trainables (theta1, b1, w2)."""

    d_theta1: np.ndarray
    d_b1: np.ndarray
    d_w2: np.ndarray

    def flat(self):
        return np.concatenate([self.d_theta1.ravel(), self.d_b1.ravel(), self.d_w2.ravel()])

    def scaled(self, a):
        return QuasiGrad(a * self.d_theta1, a * self.d_b1, a * self.d_w2)


def quasi_backward(params, x, state, loss_grad):
    """Gradient of sum_n loss_grad_n * ybar_n through the quasi network.

    Per input and hidden unit j (scalar output):
        d_w2_j      = mu2_j g / sqrt(d2)
        d_b1_j      = beta w2_j Phi(nu_j / s_j) g / sqrt(d2)
        d_theta1_ij = sqrt(c / (d1 d2)) x1_i w2_j Phi(nu_j / s_j) g
    The variance is held fixed, which is exact in limit mode.  ``x`` is only
    used to validate shapes; the projection stored in ``state`` is reused.
    """
    d, d1, d2 = params.dims
    x2d, single = check_inputs(x)
    x1 = np.atleast_2d(state.x1)
    nu = np.atleast_2d(state.nu1)
    mu2 = np.atleast_2d(state.mu2)
    s2 = np.atleast_2d(state.varsigma1_sq)
    m = x2d.shape[0]
    if x1.shape != (m, d1) or nu.shape != (m, d2):
        raise DomainError("moment state does not match the inputs")
    g = np.asarray(loss_grad, dtype=np.float64)
    q = params.n_out
    g = g.reshape(m, q) if g.size == m * q else None
    if g is None:
        raise DomainError("loss_grad shape does not match the outputs")
    w2 = params.w2.reshape(d2, q)
    _, dpsi = _act_safe(nu, s2)
    dw2 = mu2.T @ g / math.sqrt(d2)
    delta = (g @ w2.T) * dpsi / math.sqrt(d2)  # d ybar / d nu, weighted
    d_b1 = params.beta * delta.sum(axis=0)
    d_theta1 = math.sqrt(params.c / d1) * (x1.T @ delta)
    if params.w2.ndim == 1:
        dw2 = dw2[:, 0]
    return QuasiGrad(d_theta1, d_b1, dw2)


def quasi_output(params, x, mode="limit"):
    """Shortcut for the quasi network output ybar."""
    return propagate_moments(params, x, mode).ybar


@dataclass
class McStats:
    """Monte-Carlo statistics of the sampled binary network."""

    mean: np.ndarray
    var: np.ndarray
    n: int
    y1: np.ndarray | None = None


def mc_forward_stats(params, x, n_samples, rng, keep_y1=True):
    """Sample the binary network ``n_samples`` times at fixed parameters.

    Returns the sample mean and unbiased variance of y for each input and,
    when ``keep_y1`` is set, the raw hidden pre-activations with shape
    (n_kept, m, d2) (or (n_kept, d2) for a single input).  ``keep_y1=True``
    keeps every sample; an integer keeps only that many leading samples.
    """
    n = int(n_samples)
    if n < 100:
        raise DomainError("need at least 100 Monte-Carlo samples")
    x2d, single = check_inputs(x)
    d, d1, d2 = params.dims
    x1 = first_layer(params, x2d)
    theta = quant.check_buffer(params.theta1)
    key = rng.key()
    size = theta.size
    scale = math.sqrt(params.c / d1)
    bias = params.beta * params.b1
    q = params.n_out
    s1 = np.zeros((x2d.shape[0], q))
    s2 = np.zeros_like(s1)
    n_keep = n if keep_y1 is True else min(int(keep_y1), n)
    ys = np.empty((n_keep, x2d.shape[0], d2)) if n_keep else None
    w2 = params.w2.reshape(d2, q)
    for k in range(n):
        w1 = quant.quantize_with_key(theta, key, start=k * size)
        y1 = scale * (x1 @ w1) + bias
        y = np.maximum(y1, 0.0) @ w2 / math.sqrt(d2) + params.b2
        s1 += y
        s2 += y * y
        if k < n_keep:
            ys[k] = y1
    mean = s1 / n
    var = np.maximum(s2 - n * mean * mean, 0.0) / (n - 1)
    if q == 1:
        mean, var = mean[:, 0], var[:, 0]
    if single:
        mean, var = mean[0], var[0]
        if ys is not None:
            ys = ys[:, 0, :]
    return McStats(mean, var, n, ys)
