"""Neural tangent kernels of the quasi network.

The empirical kernel sums gradient products over the trainables (theta1, b1,
w2).  In matrix form, for probes with projections X1 and hidden means nu,

    K = c/(d1 d2) (X1 X1^T) * (A A^T) + beta^2/d2 (A A^T) + 1/d2 (M M^T)

with A_xj = w2_j psi'(nu_xj) and M_xj = psi(nu_xj).  As the widths grow this
tends to

    K(t) = (c t / d + beta^2) E[psi'(u) psi'(u')] + E[psi(u) psi(u')]

where (u, u') are centred Gaussians with variance (c/d) Var[theta] and
correlation t.  The expectations are evaluated with a tensor Gauss-Hermite
rule after a Cholesky factorization of the 2x2 covariance.
"""
from dataclasses import dataclass, field
import io
import json
import math

import numpy as np

from .errors import DomainError
from .network import atomic_write_bytes, check_inputs
from .num_core import make_quadrature, min_eig_ratio, solve_psd, symmetry_error
from .quasi import _act_safe, propagate_moments, quasi_backward, tilde_varsigma_sq

SYM_TOL = 1e-10
PSD_TOL = 1e-8
T_TOL = 1e-12


@dataclass
class KernelMatrix:
    """Gram matrix over a probe set with its provenance."""

    gram: np.ndarray
    provenance: str
    params: dict = field(default_factory=dict)
    probe_ids: list = field(default_factory=list)

    def symmetry_error(self):
        return symmetry_error(self.gram)

    def min_eig_ratio(self):
        return min_eig_ratio(self.gram)

    def is_valid(self):
        """Symmetric within 1e-10 and PSD up to 1e-8 of the top eigenvalue."""
        return self.symmetry_error() <= SYM_TOL and self.min_eig_ratio() >= -PSD_TOL

    def to_csv_text(self):
        head = json.dumps({"provenance": self.provenance, "params": self.params,
                           "probe_ids": list(self.probe_ids)}, sort_keys=True)
        buf = io.StringIO()
        buf.write("# " + head + "\n")
        for row in self.gram:
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    def to_csv(self, path):
        atomic_write_bytes(path, self.to_csv_text().encode("utf-8"))

    @classmethod
    def from_csv_text(cls, text):
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# "):
            raise DomainError("kernel CSV lacks its provenance header")
        head = json.loads(lines[0][2:])
        gram = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln])
        return cls(gram, head["provenance"], head["params"], head["probe_ids"])


def _symmetrize(k):
    return 0.5 * (k + k.T)


def empirical_ntk(params, probes, output=0):
    """Finite-width NTK of the quasi network (limit-variance mode)."""
    x2d, _ = check_inputs(probes)
    d, d1, d2 = params.dims
    st = propagate_moments(params, x2d, "limit")
    nu = np.atleast_2d(st.nu1)
    x1 = np.atleast_2d(st.x1)
    psi, dpsi = _act_safe(nu, st.varsigma1_sq)
    w2 = params.w2 if params.w2.ndim == 1 else params.w2[:, output]
    a = dpsi * w2
    aa = a @ a.T
    gram = (params.c / (d1 * d2)) * (x1 @ x1.T) * aa
    gram += (params.beta ** 2 / d2) * aa
    gram += (psi @ psi.T) / d2
    meta = {"d": d, "d1": d1, "d2": d2, "c": params.c, "beta": params.beta,
            "var_theta": params.var_theta}
    return KernelMatrix(_symmetrize(gram), f"empirical(width {d2})", meta,
                        list(range(x2d.shape[0])))


def empirical_ntk_explicit(params, probes, output=0):
    """Same kernel built from explicit flattened gradients (small widths only)."""
    x2d, _ = check_inputs(probes)
    if params.theta1.size > 2_000_000:
        raise DomainError("explicit NTK is meant for small oracle networks")
    rows = []
    q = params.n_out
    for x in x2d:
        st = propagate_moments(params, x, "limit")
        g = np.zeros(q)
        g[output] = 1.0
        rows.append(quasi_backward(params, x, st, g if q > 1 else 1.0).flat())
    gmat = np.array(rows)
    if q > 1:
        # keep only the w2 column that feeds the selected output
        d1, d2 = params.dims[1], params.dims[2]
        n_th = d1 * d2 + d2
        w2_cols = n_th + np.arange(d2) * q + output
        gmat = np.concatenate([gmat[:, :n_th], gmat[:, w2_cols]], axis=1)
    return KernelMatrix(_symmetrize(gmat @ gmat.T), "empirical-explicit",
                        {"dims": list(params.dims)}, list(range(x2d.shape[0])))


def _check_t(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(np.abs(t) > 1.0 + T_TOL) or not np.all(np.isfinite(t)):
        raise DomainError("inner product t must lie in [-1, 1]")
    return np.clip(t, -1.0, 1.0)


def _check_kernel_args(c, d, var_theta, beta):
    if not c > 0.0 or d < 1:
        raise DomainError("need c > 0 and d >= 1")
    if not 0.0 <= var_theta <= 1.0:
        raise DomainError("var_theta must lie in [0, 1]")
    if beta < 0.0:
        raise DomainError("beta must be non-negative")


def bwnn_sigmas(t, c=1.0, d=1.0, var_theta=1.0 / 3.0, order=64, method="quadrature",
                rng=None, n_mc=10 ** 6):
    """(Sigma0, Sigma1) = (E[psi'(u) psi'(u')], E[psi(u) psi(u')]).

    ``method="quadrature"`` uses an order x order Gauss-Hermite tensor rule,
    ``method="mc"`` draws ``n_mc`` Gaussian pairs from ``rng`` (validation
    path).
    """
    _check_kernel_args(c, d, var_theta, 0.0)
    t = _check_t(t)
    scalar = t.ndim == 0
    tt = np.atleast_1d(t).ravel()
    s = math.sqrt(c * var_theta / d)
    s2_act = tilde_varsigma_sq(c, d, var_theta)
    if method == "quadrature":
        rule = make_quadrature("gauss-hermite", order)
        u = math.sqrt(2.0) * rule.nodes
        w = rule.weights / math.sqrt(math.pi)
        ww = np.outer(w, w)
        a_psi, a_dpsi = _act_safe(s * u, s2_act)
        sig0 = np.empty_like(tt)
        sig1 = np.empty_like(tt)
        for i, ti in enumerate(tt):
            v = s * (ti * u[:, None] + math.sqrt(max(0.0, 1.0 - ti * ti)) * u[None, :])
            b_psi, b_dpsi = _act_safe(v, s2_act)
            sig0[i] = np.sum(ww * a_dpsi[:, None] * b_dpsi)
            sig1[i] = np.sum(ww * a_psi[:, None] * b_psi)
    elif method == "mc":
        if rng is None:
            raise DomainError("Monte-Carlo method needs an rng")
        sig0 = np.empty_like(tt)
        sig1 = np.empty_like(tt)
        for i, ti in enumerate(tt):
            g = rng.normal((int(n_mc), 2))
            mu = s * g[:, 0]
            mu2 = s * (ti * g[:, 0] + math.sqrt(max(0.0, 1.0 - ti * ti)) * g[:, 1])
            p1, d1_ = _act_safe(mu, s2_act)
            p2, d2_ = _act_safe(mu2, s2_act)
            sig0[i] = np.mean(d1_ * d2_)
            sig1[i] = np.mean(p1 * p2)
    else:
        raise DomainError(f"unknown method {method!r}")
    if scalar:
        return float(sig0[0]), float(sig1[0])
    return sig0.reshape(t.shape), sig1.reshape(t.shape)


def arccos_kernels(rho):
    """Zeroth and first order arc-cosine kernels of a unit-variance pair.

    kappa0 = P(u > 0, u' > 0) = (pi - arccos rho) / (2 pi)
    kappa1 = E[relu(u) relu(u')] = (sqrt(1 - rho^2) + rho (pi - arccos rho)) / (2 pi)
    """
    rho = np.clip(np.asarray(rho, dtype=np.float64), -1.0, 1.0)
    ang = np.pi - np.arccos(rho)
    k0 = ang / (2.0 * np.pi)
    k1 = (np.sqrt(np.maximum(0.0, 1.0 - rho * rho)) + rho * ang) / (2.0 * np.pi)
    return k0, k1


def bwnn_sigmas_closed_form(t, c=1.0, d=1.0, var_theta=1.0 / 3.0):
    """Arc-cosine reduction of (Sigma0, Sigma1).

    psi(u) is E[relu(u + s z)] with s^2 the limit variance, and u + s z has total
    variance c/d with correlation Var[theta] t across the pair, so
    Sigma0 = kappa0(Var t) and Sigma1 = (c/d) kappa1(Var t).  This is an
    independent route used to validate the quadrature.
    """
    _check_kernel_args(c, d, var_theta, 0.0)
    t = _check_t(t)
    k0, k1 = arccos_kernels(var_theta * t)
    if np.ndim(t) == 0:
        return float(k0), float(c / d * k1)
    return k0, c / d * k1


def analytic_ntk_bwnn(t, c=1.0, d=1.0, var_theta=1.0 / 3.0, beta=1.0, order=64,
                      method="quadrature", rng=None, n_mc=10 ** 6, parts=False):
    """Infinite-width NTK (c t / d + beta^2) Sigma0(t) + Sigma1(t)."""
    _check_kernel_args(c, d, var_theta, beta)
    t = _check_t(t)
    if method == "closed-form":
        s0, s1 = bwnn_sigmas_closed_form(t, c, d, var_theta)
    else:
        s0, s1 = bwnn_sigmas(t, c, d, var_theta, order, method, rng, n_mc)
    k = (c * t / d + beta * beta) * s0 + s1
    k = float(k) if np.ndim(k) == 0 else k
    return (k, s0, s1) if parts else k


def analytic_ntk_relu(t, c=1.0, d=1.0, beta=1.0, var_theta=1.0, parts=False):
    """Real-weight two-layer ReLU NTK with the same scale constants.

    Sigma0 = kappa0(t) and Sigma1 = (c Var / d) kappa1(t), so the defaults give
    (t + 1) kappa0(t) + kappa1(t).
    """
    _check_kernel_args(c, d, var_theta, beta)
    t = _check_t(t)
    k0, k1 = arccos_kernels(t)
    s1 = c * var_theta / d * k1
    k = (c * t / d + beta * beta) * k0 + s1
    if np.ndim(t) == 0:
        k, k0, s1 = float(k), float(k0), float(s1)
    return (k, k0, s1) if parts else k


def inner_products(x, y=None):
    """Clipped Gram of inner products between unit-norm rows."""
    x2d, _ = check_inputs(x)
    y2d = x2d if y is None else check_inputs(y)[0]
    return np.clip(x2d @ y2d.T, -1.0, 1.0)


def analytic_gram(probes, kernel="bwnn", others=None, **kw):
    """Gram (or cross-Gram against ``others``) of an analytic zonal kernel."""
    t = inner_products(probes, others)
    if kernel == "bwnn":
        vals = analytic_ntk_bwnn(t.ravel(), **kw).reshape(t.shape)
        prov = "analytic-bwnn"
    elif kernel == "relu":
        vals = analytic_ntk_relu(t, **kw)
        prov = "analytic-relu"
    else:
        raise DomainError(f"unknown analytic kernel {kernel!r}")
    if others is None:
        vals = _symmetrize(vals)
    return KernelMatrix(vals, prov, dict(kw), list(range(t.shape[0])))


def relative_frobenius(a, b):
    """||a - b||_F / ||b||_F."""
    a = a.gram if isinstance(a, KernelMatrix) else np.asarray(a)
    b = b.gram if isinstance(b, KernelMatrix) else np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def kernel_ridge_fit(k, targets, ridge):
    """Dual coefficients (K + ridge I)^-1 targets."""
    gram = k.gram if isinstance(k, KernelMatrix) else np.asarray(k, dtype=np.float64)
    if ridge < 0.0:
        raise DomainError("ridge must be non-negative")
    return solve_psd(gram, np.asarray(targets, dtype=np.float64), ridge)


def kernel_ridge_predict(coeffs, k_cross):
    """Predictions K_cross @ coeffs."""
    kc = k_cross.gram if isinstance(k_cross, KernelMatrix) else np.asarray(k_cross)
    return kc @ coeffs
