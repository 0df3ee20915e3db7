"""Three-layer architecture with a quantized hidden layer.

    x1 = w0^T x / sqrt(d) + b0
    y1 = sqrt(c / d1) w1^T x1 + beta b1
    x2 = relu(y1)
    y  = w2^T x2 / sqrt(d2) + b2

``w0`` is a fixed Gaussian projection, ``w1`` is drawn from the real buffer
``theta1`` by stochastic quantization, and ``w2`` is a real output layer.  The
output layer may have several columns for one-hot regression.
"""
from dataclasses import dataclass, field
import hashlib
import io
import json
import math
import os
import tempfile

import numpy as np

from . import quant
from .errors import DataError, DomainError

NORM_TOL = 1e-9
CHECKPOINT_FORMAT = "qbwnn-params-v1"


@dataclass
class ModelParams:
    """Real-valued parameter set.

    Trainable: ``theta1`` (d1 x d2, entries in [-1, 1]), ``b1`` (d2) and
    ``w2`` (d2, or d2 x q).  Fixed: ``w0`` (d x d1, read-only), ``b0`` and
    ``b2`` (zero).  ``var_theta`` is the variance of the initial theta
    distribution, which sets the limit variance of the quasi network.
    """

    w0: np.ndarray
    b0: np.ndarray
    theta1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float = 0.0
    c: float = 1.0
    beta: float = 1.0
    var_theta: float = 1.0 / 3.0
    seed: int | None = None

    def __post_init__(self):
        self.w0 = np.array(self.w0, dtype=np.float64)
        self.w0.flags.writeable = False
        self.b0 = np.asarray(self.b0, dtype=np.float64)
        self.theta1 = np.asarray(self.theta1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = float(self.b2)
        d, d1 = self.w0.shape
        if self.theta1.shape[0] != d1 or self.b0.shape != (d1,):
            raise DomainError("theta1/b0 do not match the projection width")
        d2 = self.theta1.shape[1]
        if self.b1.shape != (d2,) or self.w2.shape[0] != d2 or self.w2.ndim > 2:
            raise DomainError("b1/w2 do not match the hidden width")
        if min(d, d1, d2) < 1:
            raise DomainError("all widths must be >= 1")
        if not self.c > 0.0:
            raise DomainError("c must be positive")
        if self.beta < 0.0:
            raise DomainError("beta must be non-negative")

    @property
    def dims(self):
        return (self.w0.shape[0], self.w0.shape[1], self.theta1.shape[1])

    @property
    def n_out(self):
        return 1 if self.w2.ndim == 1 else self.w2.shape[1]

    def copy(self):
        """Deep copy of the trainables; the read-only projection is shared."""
        return ModelParams(
            self.w0, self.b0.copy(), self.theta1.copy(), self.b1.copy(),
            self.w2.copy(), self.b2, self.c, self.beta, self.var_theta, self.seed,
        )

    def fingerprint(self):
        """Short SHA-256 digest of all fields."""
        h = hashlib.sha256()
        for arr in (self.w0, self.b0, self.theta1, self.b1, self.w2):
            h.update(np.ascontiguousarray(arr).tobytes())
            h.update(str(arr.shape).encode())
        h.update(repr((self.b2, self.c, self.beta, self.var_theta)).encode())
        return h.hexdigest()[:16]


@dataclass
class BinarySample:
    """One realization of the binary hidden weights."""

    w1: np.ndarray
    parent: str = ""


@dataclass
class Layers:
    x1: np.ndarray
    y1: np.ndarray
    x2: np.ndarray


def init_params(dims, c=1.0, beta=1.0, theta_init="uniform", scale=1.0, rng=None, n_out=1):
    """Draw a fresh parameter set.

    ``theta_init="uniform"`` draws theta1 from U[-1, 1]; ``"scaled-uniform"``
    draws from U[-scale, scale], giving Var[theta] = scale^2 / 3.  Projection and
    output weights are standard normal, all biases zero.
    """
    from .num_core import as_rng

    d, d1, d2 = (int(v) for v in dims)
    if min(d, d1, d2) < 1:
        raise DomainError("all widths must be >= 1")
    if theta_init == "uniform":
        s = 1.0
    elif theta_init == "scaled-uniform":
        s = float(scale)
        if not 0.0 < s <= 1.0:
            raise DomainError("scaled-uniform scale must be in (0, 1]")
    else:
        raise DomainError(f"unknown theta_init {theta_init!r}")
    rng = as_rng(rng)
    w0 = rng.normal((d, d1))
    theta1 = rng.uniform(-s, s, (d1, d2))
    w2 = rng.normal(d2) if n_out == 1 else rng.normal((d2, int(n_out)))
    return ModelParams(
        w0=w0, b0=np.zeros(d1), theta1=theta1, b1=np.zeros(d2), w2=w2,
        b2=0.0, c=float(c), beta=float(beta), var_theta=s * s / 3.0, seed=rng.seed,
    )


def draw_binary(params, rng, deterministic=False):
    """Quantize ``theta1`` once."""
    w1 = quant.quantize(params.theta1, rng, deterministic=deterministic)
    return BinarySample(w1=w1, parent=params.fingerprint())


def check_inputs(x):
    """Return ``x`` as a 2-D float array after asserting unit-norm rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2d = x[None, :] if single else x
    if x2d.ndim != 2:
        raise DomainError("inputs must be a vector or a matrix of row vectors")
    norms = np.linalg.norm(x2d, axis=1)
    if not np.all(np.abs(norms - 1.0) <= NORM_TOL):
        bad = int(np.argmax(np.abs(norms - 1.0)))
        raise DomainError(f"input row {bad} is not unit-norm (|x| = {norms[bad]!r}); normalize first")
    return x2d, single


def first_layer(params, x2d):
    """Fixed projection ``x1`` for a batch of inputs."""
    d = params.dims[0]
    if x2d.shape[1] != d:
        raise DomainError(f"input dimension {x2d.shape[1]} != {d}")
    return x2d @ params.w0 / math.sqrt(d) + params.b0


def _hidden_out(params, x1, w1):
    d1, d2 = params.dims[1], params.dims[2]
    y1 = math.sqrt(params.c / d1) * (x1 @ w1) + params.beta * params.b1
    x2 = np.maximum(y1, 0.0)
    y = x2 @ params.w2 / math.sqrt(d2) + params.b2
    return y, y1, x2


def _squeeze(single, y, layers):
    if single:
        y = y[0]
        layers = Layers(layers.x1[0], layers.y1[0], layers.x2[0])
    if np.ndim(y) == 0:
        y = float(y)
    return y, layers


def forward_binary(params, sample, x):
    """Output of the network with sampled binary weights; returns (y, layers)."""
    w1 = sample.w1 if isinstance(sample, BinarySample) else np.asarray(sample)
    if w1.shape != params.theta1.shape:
        raise DomainError("binary sample shape does not match theta1")
    x2d, single = check_inputs(x)
    x1 = first_layer(params, x2d)
    y, y1, x2 = _hidden_out(params, x1, w1)
    return _squeeze(single, y, Layers(x1, y1, x2))


def forward_real(params, x, return_layers=False):
    """Same pipeline with the real buffer used directly as hidden weights."""
    x2d, single = check_inputs(x)
    x1 = first_layer(params, x2d)
    y, y1, x2 = _hidden_out(params, x1, params.theta1)
    y, layers = _squeeze(single, y, Layers(x1, y1, x2))
    return (y, layers) if return_layers else y


@dataclass
class GoodInitReport:
    """Finite-width residuals of the three initialization conditions."""

    gram_residual: float
    third_moment: float
    third_moment_bound: float
    weighted_residual: float
    tol: float
    neurons_checked: int
    passed: bool = field(default=False)

    def as_dict(self):
        return dict(self.__dict__)


def check_good_init(params, tol=0.05, max_neurons=16):
    """Check the law-of-large-numbers conditions on the projection.

    1. max |(1/d1) sum_i w0_ki w0_k'i - delta_kk'|
    2. max (1/d1) sum_i |w0_ki w0_k'i w0_k''i| against sqrt(8/pi).  By the
       AM-GM inequality the maximum over triples is attained on the diagonal
       k = k' = k'', so only the d diagonal sums are formed.
    3. max |(1/d1) sum_i w0_ki w0_k'i theta_ij^2 - Var[theta] delta_kk'| over
       the first ``max_neurons`` columns j.
    """
    d, d1, d2 = params.dims
    w0 = params.w0
    eye = np.eye(d)
    gram = w0 @ w0.T / d1
    r1 = float(np.max(np.abs(gram - eye)))
    third = float(np.max(np.mean(np.abs(w0) ** 3, axis=1)))
    bound = math.sqrt(8.0 / math.pi)
    cols = min(d2, int(max_neurons))
    r3 = 0.0
    for j in range(cols):
        wt = w0 * (params.theta1[:, j] ** 2)
        m = wt @ w0.T / d1
        r3 = max(r3, float(np.max(np.abs(m - params.var_theta * eye))))
    passed = r1 <= tol and third <= bound + tol and r3 <= tol
    return GoodInitReport(r1, third, bound, r3, float(tol), cols, passed)


def _meta(params):
    return {
        "format": CHECKPOINT_FORMAT,
        "dims": list(params.dims),
        "n_out": params.n_out,
        "b2": params.b2,
        "c": params.c,
        "beta": params.beta,
        "var_theta": params.var_theta,
        "seed": params.seed,
    }


def atomic_write_bytes(path, data):
    """Write ``data`` to ``path`` through a temporary file and a rename."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_params(params, path):
    """Checkpoint as an ``.npz`` archive with a JSON metadata entry."""
    buf = io.BytesIO()
    np.savez(
        buf, w0=np.asarray(params.w0), b0=params.b0, theta1=params.theta1,
        b1=params.b1, w2=params.w2,
        meta=np.frombuffer(json.dumps(_meta(params), sort_keys=True).encode(), dtype=np.uint8),
    )
    atomic_write_bytes(path, buf.getvalue())


def load_params(path):
    """Inverse of :func:`save_params`; round-trips bit-exactly."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            arrays = {k: z[k] for k in ("w0", "b0", "theta1", "b1", "w2")}
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"unsupported checkpoint format {meta.get('format')!r}")
    params = ModelParams(
        b2=meta["b2"], c=meta["c"], beta=meta["beta"],
        var_theta=meta["var_theta"], seed=meta["seed"], **arrays,
    )
    if list(params.dims) != meta["dims"]:
        raise DataError("checkpoint dims do not match its arrays")
    return params
