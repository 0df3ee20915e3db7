"""Training loops and lazy-training diagnostics.

Three modes share one loop:

* ``binaryconnect``: sample w1 from theta1 each step, back-propagate through
  the sampled network treating quantization as the identity, and apply the
  update to theta1 (then clip to [-1, 1]).
* ``quasi``: gradient descent on the quasi network output (limit variance).
* ``real``: the same architecture with theta1 used as ordinary real weights.

Loss is 0.5 * mean over the batch of ||y - z||^2.
"""
from dataclasses import dataclass, field, asdict
import csv
import io
import math

import numpy as np

from . import quant
from .errors import DomainError, TrainingDiverged
from .network import atomic_write_bytes, check_inputs, first_layer
from .num_core import as_rng
from .quasi import QuasiGrad, _act_safe, tilde_varsigma_sq

TRAIN_MODES = ("binaryconnect", "quasi", "real")
DIVERGENCE_LIMIT = 1e6


@dataclass
class TrainConfig:
    mode: str = "quasi"
    lr: float = 0.1
    epochs: int = 1
    batch_size: int | None = None  # None trains full batch
    weight_decay: float = 1e-3
    seed: int = 0
    record_drift_every: int = 10
    optimizer: str = "sgd"
    clip: bool = True

    def validate(self):
        if self.mode not in TRAIN_MODES:
            raise DomainError(f"mode must be one of {TRAIN_MODES}")
        if not self.lr >= 0.0 or not math.isfinite(self.lr):
            raise DomainError("lr must be a finite non-negative number")
        if self.batch_size is not None and self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.epochs < 0 or self.record_drift_every < 1:
            raise DomainError("epochs must be >= 0 and record_drift_every >= 1")
        if self.weight_decay < 0.0:
            raise DomainError("weight_decay must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise DomainError("optimizer must be 'sgd' or 'adam'")
        return self


@dataclass
class DriftLog:
    """Distances of the parameters from their initial values.

    ``varsigma`` is max_j |s_j^2(t) - s_j^2(0)| of the exact per-neuron
    variance over the probe inputs; ``varsigma_limit_gap`` is
    max_j |s_j^2(t) - limit variance|.  ``losses`` is the full-data loss under
    the mode's evaluator (quasi output for binaryconnect and quasi).
    """

    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    w2: list = field(default_factory=list)
    b1: list = field(default_factory=list)
    theta1: list = field(default_factory=list)
    varsigma: list = field(default_factory=list)
    varsigma_limit_gap: list = field(default_factory=list)

    COLUMNS = ("step", "loss", "w2_drift", "b1_drift", "theta1_drift",
               "varsigma_drift", "varsigma_limit_gap")

    def rows(self):
        return list(zip(self.steps, self.losses, self.w2, self.b1, self.theta1,
                        self.varsigma, self.varsigma_limit_gap))

    def to_csv_text(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for row in self.rows():
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()

    def to_csv(self, path):
        atomic_write_bytes(path, self.to_csv_text().encode("utf-8"))

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    params: object
    drift: DriftLog
    losses: list


def _unpack(dataset):
    """Accept a harness Dataset or an (inputs, targets) pair."""
    if hasattr(dataset, "train_arrays"):
        return dataset.train_arrays()
    x, z = dataset
    return np.asarray(x, dtype=np.float64), np.asarray(z, dtype=np.float64)


def _targets(z, params):
    z = np.asarray(z, dtype=np.float64)
    q = params.n_out
    if q == 1:
        return z.reshape(-1, 1)
    if z.ndim != 2 or z.shape[1] != q:
        raise DomainError("targets must have one column per output")
    return z


def _forward_backward(params, x1, z, mode, key=None, start=0):
    """Loss and gradient on a batch given its projection ``x1``.

    ``z`` has shape (m, q).  Returns (loss, QuasiGrad).
    """
    d, d1, d2 = params.dims
    m = x1.shape[0]
    q = params.n_out
    w2 = params.w2.reshape(d2, q)
    pre = x1 @ params.theta1 if mode != "binaryconnect" else None
    if mode == "binaryconnect":
        w1 = quant.quantize_with_key(quant.check_buffer(params.theta1), key, start)
        pre = x1 @ w1
    nu = math.sqrt(params.c / d1) * pre + params.beta * params.b1
    if mode == "quasi":
        s2 = tilde_varsigma_sq(params.c, d, params.var_theta)
        act, dact = _act_safe(nu, s2)
    else:
        act, dact = np.maximum(nu, 0.0), (nu > 0.0).astype(np.float64)
    y = act @ w2 / math.sqrt(d2) + params.b2
    resid = y - z
    loss = 0.5 * float(np.sum(resid * resid)) / m
    g = resid / m
    delta = (g @ w2.T) * dact / math.sqrt(d2)
    d_w2 = act.T @ g / math.sqrt(d2)
    grad = QuasiGrad(
        math.sqrt(params.c / d1) * (x1.T @ delta),
        params.beta * delta.sum(axis=0),
        d_w2[:, 0] if params.w2.ndim == 1 else d_w2,
    )
    return loss, grad


def evaluate_loss(params, x, z, mode="quasi"):
    """Full-data loss; binaryconnect is scored with the quasi output."""
    x2d, _ = check_inputs(x)
    x1 = first_layer(params, x2d)
    eval_mode = "real" if mode == "real" else "quasi"
    loss, _ = _forward_backward(params, x1, _targets(z, params), eval_mode)
    return loss


def _exact_varsigma(params, x1):
    d1 = params.dims[1]
    return (params.c / d1) * ((x1 * x1) @ (1.0 - params.theta1 ** 2))


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, name, p, g):
        if name not in self.m:
            self.m[name] = np.zeros_like(p)
            self.v[name] = np.zeros_like(p)
        if name == "theta1":
            self.t += 1
        m = self.m[name]
        v = self.v[name]
        m *= self.b1
        m += (1.0 - self.b1) * g
        v *= self.b2
        v += (1.0 - self.b2) * g * g
        t = max(self.t, 1)
        mhat = m / (1.0 - self.b1 ** t)
        vhat = v / (1.0 - self.b2 ** t)
        p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train(params, dataset, cfg, rng=None, probes=None):
    """Train a copy of ``params``; returns a :class:`TrainResult`.

    ``probes`` (default: the first 64 training inputs) are used for the
    per-neuron variance diagnostics in the drift log.
    """
    cfg.validate()
    rng = as_rng(rng, cfg.seed)
    x, z = _unpack(dataset)
    x2d, _ = check_inputs(x)
    p = params.copy()
    z = _targets(z, p)
    if z.shape[0] != x2d.shape[0]:
        raise DomainError("inputs and targets disagree in length")
    m = x2d.shape[0]
    x1_all = first_layer(p, x2d)
    probe_x1 = x1_all[:64] if probes is None else first_layer(p, check_inputs(probes)[0])
    bs = m if cfg.batch_size is None else min(int(cfg.batch_size), m)
    shuffle_rng = rng.substream("shuffle")
    quant_key = rng.substream("quantize").key()
    d, d1, d2 = p.dims
    limit_s2 = tilde_varsigma_sq(p.c, d, p.var_theta)
    init = p.copy()
    s2_init = _exact_varsigma(init, probe_x1)
    log = DriftLog()
    adam = _Adam(cfg.lr) if cfg.optimizer == "adam" else None

    def record(step):
        s2 = _exact_varsigma(p, probe_x1)
        log.steps.append(step)
        log.losses.append(evaluate_loss(p, x2d, z, cfg.mode))
        log.w2.append(float(np.linalg.norm(p.w2 - init.w2)))
        log.b1.append(float(np.linalg.norm(p.b1 - init.b1)))
        log.theta1.append(float(np.linalg.norm(p.theta1 - init.theta1)))
        log.varsigma.append(float(np.max(np.abs(s2 - s2_init))))
        log.varsigma_limit_gap.append(float(np.max(np.abs(s2 - limit_s2))))

    record(0)
    losses = []
    step = 0
    for _ in range(int(cfg.epochs)):
        order = np.arange(m) if bs == m else shuffle_rng.permutation(m)
        for lo in range(0, m, bs):
            idx = order[lo:lo + bs]
            loss, grad = _forward_backward(
                p, x1_all[idx], z[idx], cfg.mode, key=quant_key, start=step * p.theta1.size
            )
            if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                raise TrainingDiverged(step, loss)
            losses.append(loss)
            wd = cfg.weight_decay
            for name, g in (("theta1", grad.d_theta1), ("b1", grad.d_b1), ("w2", grad.d_w2)):
                arr = getattr(p, name)
                if wd:
                    g = g + wd * arr
                if adam is None:
                    arr -= cfg.lr * g
                else:
                    adam.step(name, arr, g)
            if cfg.clip and cfg.mode != "real":
                np.clip(p.theta1, -1.0, 1.0, out=p.theta1)
            step += 1
            if step % cfg.record_drift_every == 0:
                record(step)
    if log.steps[-1] != step:
        record(step)
    return TrainResult(p, log, losses)


def measure_kernel_drift(params_t0, params_t1, probe_inputs):
    """Relative Frobenius change of the empirical NTK between two parameter sets."""
    from .ntk import empirical_ntk

    k0 = empirical_ntk(params_t0, probe_inputs).gram
    k1 = empirical_ntk(params_t1, probe_inputs).gram
    return float(np.linalg.norm(k1 - k0) / np.linalg.norm(k0))


def clip_check(params):
    """Fraction of theta1 entries sitting on the +-1 boundary."""
    return float(np.mean(np.abs(params.theta1) >= 1.0 - quant.THETA_TOL))
