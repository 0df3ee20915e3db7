"""Zonal kernels on the sphere and their Gegenbauer coefficients.

A zonal function f(t) of the inner product t = <x, x'> on S^{d-1} expands as

    f(t) = sum_k u_k N(d, k) P_k(t),   u_k = Z^-1 int f P_k w dt,

with P_k the Gegenbauer polynomials normalized to P_k(1) = 1, the weight
w(t) = (1 - t^2)^((d-3)/2), Z = int w dt, and N(d, k) the dimension of the
degree-k harmonic space.  Projections use Gauss-Jacobi quadrature.  Smooth
kernels whose coefficients fall below double-precision noise can be projected
in extended precision with mpmath instead.
"""
from dataclasses import dataclass, field
from functools import lru_cache
import io
import json
import math

import mpmath
import numpy as np
from scipy import special

from .errors import DomainError
from .network import atomic_write_bytes
from .num_core import make_quadrature, sample_chi
from . import ntk

MAX_DEGREE = 256
MAX_PROJECT_DEGREE = 64
MAX_DIM = 25
UNDERFLOW = 1e-250
CONVERGENCE_TOL = 1e-6


def _check_dim(d):
    d = int(d)
    if d < 2:
        raise DomainError("sphere dimension d must be >= 2")
    return d


def legendre_table(d, kmax, t):
    """Rows P_0(t) .. P_kmax(t) of the normalized Gegenbauer family."""
    d = _check_dim(d)
    kmax = int(kmax)
    if kmax < 0 or kmax > MAX_DEGREE:
        raise DomainError(f"degree must be in [0, {MAX_DEGREE}]")
    t = np.asarray(t, dtype=np.float64)
    if np.any(np.abs(t) > 1.0 + 1e-12):
        raise DomainError("legendre_eval needs |t| <= 1")
    out = np.empty((kmax + 1,) + t.shape)
    out[0] = 1.0
    if kmax >= 1:
        out[1] = t
    for k in range(1, kmax):
        out[k + 1] = ((2 * k + d - 2) * t * out[k] - k * out[k - 1]) / (k + d - 2)
    return out


def legendre_eval(d, k, t):
    """P_k(t) in dimension d, by the three-term recurrence."""
    val = legendre_table(d, k, t)[int(k)]
    return float(val) if np.ndim(val) == 0 else val


def n_dk(d, k):
    """Dimension N(d, k) = (2k+d-2)(k+d-3)! / (k! (d-2)!) of degree-k harmonics."""
    d = _check_dim(d)
    k = int(k)
    if k < 0:
        raise DomainError("degree must be non-negative")
    if k == 0:
        return 1
    num = (2 * k + d - 2) * math.factorial(k + d - 3)
    den = math.factorial(k) * math.factorial(d - 2)
    n, rem = divmod(num, den)
    if rem:
        raise ArithmeticError("N(d, k) is not an integer; formula misuse")
    if n >= 1 << 63:
        raise OverflowError(f"N({d}, {k}) exceeds 64-bit range")
    return n


def shift_by_t(coeffs, d):
    """Coefficients of t f(t) given those of f (degree K drops to K - 1).

    Uses t P_k = ((k + d - 2) P_{k+1} + k P_{k-1}) / (2k + d - 2).
    """
    d = _check_dim(d)
    a = np.asarray(coeffs, dtype=np.float64)
    kmax = len(a) - 1
    nd = np.array([float(n_dk(d, k)) for k in range(kmax + 1)])
    b = np.zeros(kmax)
    for j in range(kmax):
        acc = 0.0
        if j >= 1:
            acc += a[j - 1] * nd[j - 1] * (j + d - 3) / (2 * j + d - 4)
        acc += a[j + 1] * nd[j + 1] * (j + 1) / (2 * j + d)
        b[j] = acc / nd[j]
    return b


@dataclass
class GegenbauerBasis:
    """Normalized Gegenbauer polynomials of dimension d up to degree K."""

    d: int
    kmax: int

    def __post_init__(self):
        self.d = _check_dim(self.d)

    def eval(self, t):
        return legendre_table(self.d, self.kmax, t)

    def counts(self):
        return [n_dk(self.d, k) for k in range(self.kmax + 1)]

    def gram(self, order=None):
        """Matrix Z^-1 int P_j P_k w dt; ideally diag(1 / N(d, k))."""
        a = (self.d - 3) / 2.0
        n = order or max(64, self.kmax + 2)
        rule = make_quadrature("gauss-jacobi", n, a, a)
        p = self.eval(rule.nodes)
        wn = rule.weights / np.sum(rule.weights)
        return (p * wn) @ p.T

    def orthogonality_residual(self, order=None):
        """max_jk |N(d, k) G_jk - delta_jk|."""
        g = self.gram(order)
        nd = np.array([float(n) for n in self.counts()])
        return float(np.max(np.abs(g * nd[None, :] - np.eye(self.kmax + 1))))


@dataclass
class DecayFit:
    model: str
    slope: float
    intercept: float
    r2: float

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class DecayReport:
    """Exponential and power-law fits on one parity class and k window."""

    k_range: tuple
    parity: str
    degrees: list
    exponential: DecayFit
    power: DecayFit

    @property
    def exponent(self):
        """Fitted p of u_k ~ k^-p."""
        return -self.power.slope

    @property
    def preferred(self):
        return "exponential" if self.exponential.r2 > self.power.r2 else "power-law"

    def as_dict(self):
        return {"k_range": list(self.k_range), "parity": self.parity,
                "degrees": list(self.degrees), "exponential": self.exponential.as_dict(),
                "power_law": self.power.as_dict(), "power_exponent": self.exponent,
                "preferred": self.preferred}


@dataclass
class SpectrumTable:
    """Per-degree coefficients of a zonal function."""

    d: int
    coeffs: np.ndarray
    label: str = ""
    converged: bool = True
    meta: dict = field(default_factory=dict)
    fit: DecayReport | None = None

    @property
    def degrees(self):
        return list(range(len(self.coeffs)))

    @property
    def counts(self):
        return [n_dk(self.d, k) for k in self.degrees]

    def reconstruct(self, t, kmax=None):
        """sum_k u_k N(d, k) P_k(t) truncated at ``kmax``."""
        kmax = len(self.coeffs) - 1 if kmax is None else int(kmax)
        p = legendre_table(self.d, kmax, t)
        w = np.asarray(self.coeffs[:kmax + 1]) * np.array([float(n) for n in self.counts[:kmax + 1]])
        return np.tensordot(w, p, axes=1)

    def parity_mass(self, parity, skip=()):
        """max |u_k| over the given parity (excluding ``skip``) relative to max |u|."""
        top = float(np.max(np.abs(self.coeffs)))
        want = 0 if parity == "even" else 1
        vals = [abs(self.coeffs[k]) for k in self.degrees if k % 2 == want and k not in skip]
        return (max(vals) / top) if vals and top > 0 else 0.0

    def to_csv_text(self):
        buf = io.StringIO()
        buf.write("k,N_dk,u_k,parity\n")
        for k, n, u in zip(self.degrees, self.counts, self.coeffs):
            buf.write(f"{k},{n},{float(u)!r},{'even' if k % 2 == 0 else 'odd'}\n")
        return buf.getvalue()

    def fit_json(self):
        block = {"label": self.label, "d": self.d, "converged": self.converged,
                 "meta": self.meta, "fit": self.fit.as_dict() if self.fit else None}
        return json.dumps(block, sort_keys=True, indent=2)

    def to_csv(self, path, fit_path=None):
        atomic_write_bytes(path, self.to_csv_text().encode("utf-8"))
        if fit_path is not None:
            atomic_write_bytes(fit_path, self.fit_json().encode("utf-8"))


# ---------------------------------------------------------------- projection

def _project_double(f, d, kmax, order):
    a = (d - 3) / 2.0
    rule = make_quadrature("gauss-jacobi", order, a, a)
    vals = np.asarray(f(rule.nodes), dtype=np.float64)
    p = legendre_table(d, kmax, rule.nodes)
    wn = rule.weights / np.sum(rule.weights)
    return p @ (wn * vals)


@lru_cache(maxsize=32)
def _jacobi_rule_mp(n, a2, dps):
    """Gauss-Jacobi nodes and unnormalized weights, alpha = beta = a2 / 2.

    Starts Newton from the double-precision roots and polishes in mpmath.
    Weights are proportional to 1 / ((1 - x^2) P_n'(x)^2); the overall constant
    cancels in self-normalized projections.
    """
    a = mpmath.mpf(a2) / 2
    with mpmath.workdps(dps + 10):
        x0, _ = special.roots_jacobi(n, float(a), float(a))

        def pn(x):
            p0, p1 = mpmath.mpf(1), (a + 1) * x
            for m in range(2, n + 1):
                c0 = 2 * m * (m + 2 * a) * (2 * m + 2 * a - 2)
                c1 = (2 * m + 2 * a - 1) * (2 * m + 2 * a) * (2 * m + 2 * a - 2)
                c2 = 2 * (m + a - 1) ** 2 * (2 * m + 2 * a)
                p0, p1 = p1, (c1 * x * p1 - c2 * p0) / c0
            dp = (-n * x * p1 + (n + a) * p0) / (1 - x * x)
            return p1, dp

        nodes, weights = [], []
        for xi in x0:
            x = mpmath.mpf(float(xi))
            for _ in range(8):
                p, dp = pn(x)
                step = p / dp
                x -= step
                if abs(step) < mpmath.mpf(10) ** (-(dps + 5)):
                    break
            _, dp = pn(x)
            nodes.append(x)
            weights.append(1 / ((1 - x * x) * dp * dp))
        return tuple(nodes), tuple(weights)


def _project_mp(f, d, kmax, order, dps):
    with mpmath.workdps(dps):
        nodes, weights = _jacobi_rule_mp(order, d - 3, dps)
        total = mpmath.fsum(weights)
        acc = [mpmath.mpf(0)] * (kmax + 1)
        for x, w in zip(nodes, weights):
            fw = f(x) * w
            p0, p1 = mpmath.mpf(1), x
            acc[0] += fw
            if kmax >= 1:
                acc[1] += fw * p1
            for k in range(1, kmax):
                p0, p1 = p1, ((2 * k + d - 2) * x * p1 - k * p0) / (k + d - 2)
                acc[k + 1] += fw * p1
        return [a / total for a in acc]


def project_zonal(f, d, kmax, order=256, check=True, dps=None, label=""):
    """Gegenbauer coefficients of ``f`` up to degree ``kmax``.

    In double precision ``f`` receives an array of nodes.  With ``dps`` set the
    projection runs in mpmath at that many digits and ``f`` receives one
    ``mpf`` at a time.  When ``check`` is on the projection is repeated at twice
    the order and flagged non-converged if any coefficient moves by more than
    1e-6 of the largest.
    """
    d = _check_dim(d)
    if d > MAX_DIM:
        raise DomainError(f"dimension above {MAX_DIM} is not supported")
    kmax = int(kmax)
    if not 0 <= kmax <= MAX_PROJECT_DEGREE:
        raise DomainError(f"kmax must be in [0, {MAX_PROJECT_DEGREE}]")
    order = int(order)
    if dps is None:
        coeffs = _project_double(f, d, kmax, order)
        other = _project_double(f, d, kmax, min(2 * order, 4096)) if check else coeffs
        raw = coeffs
    else:
        raw = _project_mp(f, d, kmax, order, int(dps))
        other = _project_mp(f, d, kmax, 2 * order, int(dps)) if check else raw
        coeffs = np.array([float(v) for v in raw])
        other = np.array([float(v) for v in other])
    top = float(np.max(np.abs(coeffs))) if kmax >= 0 else 0.0
    delta = float(np.max(np.abs(np.asarray(other) - coeffs)))
    converged = delta <= CONVERGENCE_TOL * top if top > 0 else True
    meta = {"order": order, "precision": "double" if dps is None else f"mp{int(dps)}",
            "order_doubling_change": delta}
    return SpectrumTable(d, np.asarray(coeffs, dtype=np.float64), label, bool(converged), meta)


# ------------------------------------------------------------- activations

def _psi_mp(c_hat, s):
    c_hat, s = mpmath.mpf(c_hat), mpmath.mpf(s)

    def f(t):
        nu = c_hat * t
        return s * mpmath.npdf(nu / s) + nu * mpmath.ncdf(nu / s)

    return f


def _dpsi_mp(c_hat, s):
    c_hat, s = mpmath.mpf(c_hat), mpmath.mpf(s)
    return lambda t: mpmath.ncdf(c_hat * t / s)


def _sign_pattern_ok(coeffs, parity, kmax, skip):
    want = 0 if parity == "even" else 1
    return all(coeffs[k] > 0 for k in range(min(kmax, len(coeffs) - 1) + 1)
               if k % 2 == want and k not in skip)


def activation_coeffs(c_hat, d, kmax, varsigma=1.0, dps=50, order=128):
    """Coefficients of psi(c_hat t) and psi'(c_hat t).

    psi minus nu/2 is even and psi' minus 1/2 is odd, so psi has no odd
    coefficients beyond k = 1 and psi' no even ones beyond k = 0.  Both tables
    record the forbidden-parity mass and whether every supported-parity
    coefficient up to degree 20 is positive.
    """
    if not c_hat > 0.0 or not varsigma > 0.0:
        raise DomainError("c_hat and varsigma must be positive")
    lam = project_zonal(_psi_mp(c_hat, varsigma), d, kmax, order, dps=dps, label="psi")
    lamp = project_zonal(_dpsi_mp(c_hat, varsigma), d, kmax, order, dps=dps, label="dpsi")
    lam.meta.update({
        "c_hat": c_hat, "varsigma": varsigma, "supported_parity": "even",
        "forbidden_mass": lam.parity_mass("odd", skip=(1,)),
        "supported_positive_k20": _sign_pattern_ok(lam.coeffs, "even", 20, ()),
    })
    lamp.meta.update({
        "c_hat": c_hat, "varsigma": varsigma, "supported_parity": "odd",
        "forbidden_mass": lamp.parity_mass("even", skip=(0,)),
        "supported_positive_k20": _sign_pattern_ok(lamp.coeffs, "odd", 20, ()),
    })
    return lam, lamp


# ---------------------------------------------------------------- kernels

def effective_tc(var_theta):
    """sqrt(Var / (1 - Var))."""
    if not 0.0 <= var_theta < 1.0:
        raise DomainError("var_theta must lie in [0, 1)")
    return math.sqrt(var_theta / (1.0 - var_theta))


def asymptotic_ratio(var_theta):
    """tc^2 / (2 (1 + tc^2)) with tc = effective_tc(var_theta)."""
    tc2 = effective_tc(var_theta) ** 2
    return tc2 / (2.0 * (1.0 + tc2))


def _bwnn_closed_mp(c, d, var_theta, beta):
    c, dd, v, b = (mpmath.mpf(x) for x in (c, d, var_theta, beta))

    def f(t):
        rho = v * t
        ang = mpmath.pi - mpmath.acos(rho)
        k0 = ang / (2 * mpmath.pi)
        k1 = (mpmath.sqrt(1 - rho * rho) + rho * ang) / (2 * mpmath.pi)
        return (c * t / dd + b * b) * k0 + c / dd * k1

    return f


def kernel_eigen_bwnn(c=1.0, d=3, var_theta=1.0 / 3.0, beta=1.0, kmax=40,
                      method="mp", dps=60, order=None, quad_order=64):
    """Coefficients u_k of the infinite-width binary-weight NTK.

    ``method="mp"`` projects the arc-cosine closed form in extended precision;
    ``method="quadrature"`` projects the Gauss-Hermite kernel in double
    precision (accurate only while u_k is far above 1e-16).  Both tables carry
    a recurrence cross-check: the (c t/d + beta^2) Sigma0 part is rebuilt from
    the Sigma0 coefficients through ``shift_by_t`` and compared with a direct
    projection.
    """
    if method == "mp":
        order = order or 128
        table = project_zonal(_bwnn_closed_mp(c, d, var_theta, beta), d, kmax, order,
                              dps=dps, label="bwnn-ntk")
    elif method == "quadrature":
        order = order or 256
        f = lambda t: ntk.analytic_ntk_bwnn(t, c, d, var_theta, beta, order=quad_order)
        table = project_zonal(f, d, kmax, order, label="bwnn-ntk")
    else:
        raise DomainError(f"unknown method {method!r}")
    sig0 = lambda t: ntk.bwnn_sigmas_closed_form(t, c, d, var_theta)[0]
    ord_chk = max(order if method == "quadrature" else 256, 64)
    a = project_zonal(sig0, d, min(kmax + 1, MAX_PROJECT_DEGREE), ord_chk, check=False).coeffs
    direct = project_zonal(lambda t: (c * t / d + beta * beta) * sig0(t), d,
                           min(kmax, MAX_PROJECT_DEGREE - 1), ord_chk, check=False).coeffs
    shifted = c / d * shift_by_t(a, d)[:len(direct)] + beta * beta * a[:len(direct)]
    table.meta.update({
        "kernel": "bwnn", "c": c, "var_theta": var_theta, "beta": beta,
        "tc": effective_tc(var_theta), "asymptotic_ratio": asymptotic_ratio(var_theta),
        "recurrence_residual": float(np.max(np.abs(shifted - direct)) / np.max(np.abs(direct))),
    })
    return table


def kernel_eigen_relu(c=1.0, d=3, beta=1.0, var_theta=1.0, kmax=40, order=2048):
    """Coefficients of the real-weight ReLU NTK (not analytic at t = +-1)."""
    f = lambda t: ntk.analytic_ntk_relu(t, c=c, d=d, beta=beta, var_theta=var_theta)
    table = project_zonal(f, d, kmax, order, label="relu-ntk")
    table.meta.update({"kernel": "relu", "c": c, "beta": beta, "var_theta": var_theta})
    return table


def rgauss_kernel(t, d, xi):
    """Randomized-scale Gaussian kernel (1 + 2 (2 - 2t) / xi^2)^(-d/2)."""
    if not xi > 0.0:
        raise DomainError("xi must be positive")
    t = np.asarray(t, dtype=np.float64)
    val = (1.0 + 2.0 * (2.0 - 2.0 * t) / (xi * xi)) ** (-0.5 * d)
    return float(val) if val.ndim == 0 else val


def rgauss_kernel_mc(t, d, xi, n, rng):
    """Monte-Carlo estimate of E_kappa[exp(-kappa^2 (2 - 2t) / xi^2)], kappa ~ chi_d.

    Returns (mean, standard error).
    """
    if not xi > 0.0:
        raise DomainError("xi must be positive")
    kappa = sample_chi(rng, d, size=int(n))
    vals = np.exp(-kappa * kappa * (2.0 - 2.0 * float(t)) / (xi * xi))
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(len(vals)))


def kernel_eigen_rgauss(d=3, xi=2.0, kmax=40, dps=60, order=128):
    if not xi > 0.0:
        raise DomainError("xi must be positive")
    x2 = mpmath.mpf(xi) ** 2
    f = lambda t: (1 + 2 * (2 - 2 * t) / x2) ** (-mpmath.mpf(d) / 2)
    table = project_zonal(f, d, kmax, order, dps=dps, label="rgauss")
    table.meta.update({"kernel": "rgauss", "xi": xi})
    return table


def laplace_zonal(t, c=1.0):
    """exp(-c ||x - x'||) on the sphere."""
    t = np.asarray(t, dtype=np.float64)
    return np.exp(-c * np.sqrt(np.maximum(0.0, 2.0 - 2.0 * t)))


def gaussian_zonal(t, c=1.0):
    """exp(-(c ||x - x'||)^2) on the sphere."""
    t = np.asarray(t, dtype=np.float64)
    return np.exp(-c * c * (2.0 - 2.0 * t))


def kernel_eigen_laplace(d=3, c=1.0, kmax=40, order=2048):
    table = project_zonal(lambda t: laplace_zonal(t, c), d, kmax, order, label="laplace")
    table.meta.update({"kernel": "laplace", "c": c})
    return table


def kernel_eigen_gaussian(d=3, c=1.0, kmax=40, dps=60, order=128):
    cc = mpmath.mpf(c) ** 2
    table = project_zonal(lambda t: mpmath.exp(-cc * (2 - 2 * t)), d, kmax, order,
                          dps=dps, label="gaussian")
    table.meta.update({"kernel": "gaussian", "c": c})
    return table


# ---------------------------------------------------------------- fitting

def _linfit(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def default_window(coeffs, start=1):
    """Largest [start, k] window over which u_k stays above the underflow floor."""
    c = np.abs(np.asarray(coeffs, dtype=np.float64))
    hi = start
    for k in range(start, len(c)):
        if c[k] > UNDERFLOW:
            hi = k
        else:
            break
    return (start, hi)


def fit_decay(table, k_range=None, parity="even"):
    """Fit log u_k against k (exponential) and log k (power law).

    Only strictly positive coefficients of the requested parity ("even",
    "odd" or "all") inside ``k_range`` (inclusive) are used.
    """
    coeffs = table.coeffs if isinstance(table, SpectrumTable) else np.asarray(table, dtype=np.float64)
    if k_range is None:
        k_range = default_window(coeffs)
    lo, hi = int(k_range[0]), int(k_range[1])
    if parity not in ("even", "odd", "all"):
        raise DomainError("parity must be 'even', 'odd' or 'all'")
    ks = [k for k in range(max(lo, 1), min(hi, len(coeffs) - 1) + 1)
          if (parity == "all" or k % 2 == (0 if parity == "even" else 1))
          and coeffs[k] > UNDERFLOW]
    if len(ks) < 6:
        raise DomainError(f"only {len(ks)} positive coefficients in the window; need 6")
    logu = np.log([coeffs[k] for k in ks])
    a, b, r2e = _linfit(ks, logu)
    p, bp, r2p = _linfit(np.log(ks), logu)
    report = DecayReport((lo, hi), parity, ks, DecayFit("exponential", a, b, r2e),
                         DecayFit("power-law", p, bp, r2p))
    if isinstance(table, SpectrumTable):
        table.fit = report
    return report


def coefficient_ratio(table, k):
    """u_{k+2} / u_k."""
    c = table.coeffs if isinstance(table, SpectrumTable) else table
    return float(c[k + 2] / c[k])
