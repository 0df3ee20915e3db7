"""Experiment orchestration.

Monte-Carlo checks of the quasi approximation, gradient unbiasedness, NTK
width convergence and drift sweeps, synthetic datasets, and the paired
generalization-gap comparison between real and binary networks and between
Laplace and Gaussian kernel ridge regression.
"""
from dataclasses import dataclass, field, asdict
import csv
import io
import math

import numpy as np
from scipy import special, stats

from . import ntk, quant, quasi, spectrum
from .errors import DomainError, TrainingDiverged
from .network import check_inputs, first_layer, forward_real, init_params
from .num_core import Rng, as_rng
from .trainer import TrainConfig, measure_kernel_drift, train

# two-sided tail mass of a 4-sigma normal interval
P_4SIGMA = 2.0 * special.ndtr(-4.0)


def unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_sphere(rng, m, d):
    return unit_rows(rng.normal((int(m), int(d))))


# ----------------------------------------------------------------- datasets

@dataclass
class Dataset:
    """Unit-norm inputs with regression targets or class indices."""

    inputs: np.ndarray
    targets: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    name: str = ""
    seed: int | None = None
    task: str = "regression"
    classes: list = field(default_factory=list)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        self.validate()

    def validate(self):
        check_inputs(self.inputs)
        m = self.inputs.shape[0]
        if len(self.targets) != m:
            raise DomainError("targets and inputs differ in length")
        both = np.concatenate([self.train_idx, self.test_idx])
        if len(np.unique(both)) != len(both) or (len(both) and (both.min() < 0 or both.max() >= m)):
            raise DomainError("train/test splits must be disjoint valid indices")
        if len(both) != m:
            raise DomainError("train/test splits must cover every row")
        return self

    @property
    def n_classes(self):
        return len(self.classes)

    def encode(self, idx):
        """Regression targets: one-hot rows for classification."""
        t = np.asarray(self.targets)[idx]
        if self.task == "classification":
            return np.eye(self.n_classes)[t.astype(np.int64)]
        return t.astype(np.float64)

    def train_arrays(self):
        return self.inputs[self.train_idx], self.encode(self.train_idx)

    def test_arrays(self):
        return self.inputs[self.test_idx], self.encode(self.test_idx)


def split_indices(m, test_frac, rng):
    perm = rng.permutation(int(m))
    n_test = int(round(test_frac * m))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def make_synthetic(kind, m, d, noise=0.0, seed=0, test_frac=0.5, separation=2.0,
                   frequency=1.0, n_waves=8):
    """Seeded synthetic dataset on the unit sphere.

    ``two-gaussians-on-sphere``: points from N(+-separation e, I) projected
    to the sphere, class given by the sign; ``noise`` is the label-flip rate.
    ``random-fourier-target``: uniform points, target
    sum_r a_r cos(frequency <omega_r, x> + phase_r) with a_r ~ N(0, 1/R), plus
    Gaussian noise of standard deviation ``noise``.
    """
    if m < 20 or d < 2:
        raise DomainError("need m >= 20 and d >= 2")
    rng = Rng(seed, ("synthetic", kind))
    if kind == "two-gaussians-on-sphere":
        if not 0.0 <= noise <= 0.5:
            raise DomainError("label-flip noise must lie in [0, 0.5]")
        e = unit_rows(rng.normal((1, d)))[0]
        y = rng.integers(0, 2, m)
        sign = 2.0 * y - 1.0
        x = unit_rows(sign[:, None] * separation * e + rng.normal((m, d)))
        flip = rng.uniform(size=m) < noise
        y = np.where(flip, 1 - y, y)
        tr, te = split_indices(m, test_frac, rng)
        return Dataset(x, y.astype(np.int64), tr, te, f"two-gaussians-d{d}-s{seed}", seed,
                       "classification", ["-1", "+1"])
    if kind == "random-fourier-target":
        x = random_sphere(rng, m, d)
        omega = unit_rows(rng.normal((n_waves, d)))
        phase = rng.uniform(0.0, 2.0 * math.pi, n_waves)
        amp = rng.normal(n_waves) / math.sqrt(n_waves)
        z = np.cos(frequency * x @ omega.T + phase) @ amp
        z = z + noise * rng.normal(m)
        tr, te = split_indices(m, test_frac, rng)
        return Dataset(x, z, tr, te, f"fourier-d{d}-s{seed}", seed, "regression", [])
    raise DomainError(f"unknown synthetic kind {kind!r}")


# ---------------------------------------------------------------- statistics

@dataclass
class TTestResult:
    t: float
    p: float
    p_greater: float
    n: int
    mean_diff: float
    flag: str = ""


T_CAP = 1e12


def paired_ttest(a, b):
    """Paired t test of a - b with two-sided and one-sided (a > b) p-values.

    All-zero differences give t = 0, p = 1 (flag "degenerate"); a constant
    non-zero difference gives a capped t and p = 0 (flag "zero-variance").
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("paired samples must be equal-length vectors")
    n = len(a)
    if n < 2:
        raise DomainError("need at least two pairs")
    diff = a - b
    mean = float(np.mean(diff))
    sd = float(np.std(diff, ddof=1))
    if np.all(diff == 0.0):
        return TTestResult(0.0, 1.0, 0.5, n, 0.0, "degenerate")
    if sd == 0.0 or sd <= 1e-15 * abs(mean):
        t = math.copysign(T_CAP, mean)
        return TTestResult(t, 0.0, 0.0 if mean > 0 else 1.0, n, mean, "zero-variance")
    t = mean / (sd / math.sqrt(n))
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 1)))
    pg = float(stats.t.sf(t, n - 1))
    return TTestResult(float(t), p, pg, n, mean, "")


def ks_statistic(samples, mean, sd):
    """Kolmogorov-Smirnov distance of samples to N(mean, sd^2).

    A zero ``sd`` compares against a point mass.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if sd <= 0.0:
        return 0.0 if np.all(np.abs(samples - mean) <= 1e-12 * max(1.0, abs(mean))) else 1.0
    return float(stats.kstest(samples, "norm", args=(mean, sd)).statistic)


# --------------------------------------------------------- quasi verification

def verify_quasi(width=1600, n_samples=1000, n_probes=64, seed=0, d=16, d2=64,
                 n_mc=10000, ks_threshold=0.05, pass_fraction=0.95, r_threshold=0.99,
                 params=None):
    """Monte-Carlo check of the Gaussian and mean approximations.

    For every probe and hidden unit the first ``n_samples`` sampled
    pre-activations are compared with N(nu, s^2) (exact per-neuron variance) by
    a KS test.  The quasi outputs (limit and exact variance) are correlated with
    Monte-Carlo means over ``n_mc`` samples.
    """
    if width < 100 or n_samples < 500:
        raise DomainError("need width >= 100 and n_samples >= 500")
    rng = Rng(seed)
    if params is None:
        params = init_params((d, width, d2), rng=rng.substream("init"))
    probes = random_sphere(rng.substream("probes"), n_probes, params.dims[0])
    exact = quasi.propagate_moments(params, probes, "exact")
    limit = quasi.propagate_moments(params, probes, "limit")
    mc = quasi.mc_forward_stats(params, probes, max(n_mc, n_samples), rng.substream("mc"),
                                keep_y1=n_samples)
    ks = np.empty((probes.shape[0], params.dims[2]))
    sds = np.sqrt(exact.varsigma1_sq)
    for p in range(probes.shape[0]):
        for j in range(params.dims[2]):
            ks[p, j] = ks_statistic(mc.y1[:, p, j], exact.nu1[p, j], sds[p, j])
    frac = float(np.mean(ks < ks_threshold))
    se = np.sqrt(mc.var / mc.n)
    r_limit = _pearson(limit.ybar, mc.mean)
    r_exact = _pearson(exact.ybar, mc.mean)
    zmax = float(np.max(np.abs(exact.ybar - mc.mean) / np.maximum(se, 1e-300)))
    checks = [
        _check("ks_pass_fraction", frac, pass_fraction, frac >= pass_fraction),
        _check("pearson_r_limit", r_limit, r_threshold, r_limit > r_threshold),
    ]
    return {
        "width": int(params.dims[1]), "d": int(params.dims[0]), "d2": int(params.dims[2]),
        "n_samples": int(n_samples), "n_mc": int(mc.n), "n_probes": int(probes.shape[0]),
        "seed": int(seed), "n_neurons_tested": int(ks.size),
        "ks_pass_fraction": frac, "ks_median": float(np.median(ks)), "ks_max": float(np.max(ks)),
        "pearson_r_limit": r_limit, "pearson_r_exact": r_exact,
        "max_abs_z_exact_mean": zmax,
        "checks": checks, "passed": all(c["passed"] for c in checks),
    }


def _pearson(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if np.std(a) == 0.0 or np.std(b) == 0.0:
        return 1.0 if np.allclose(a, b) else 0.0
    return float(np.corrcoef(a, b)[0, 1])


def _check(name, value, threshold, passed):
    return {"name": name, "value": float(value), "threshold": float(threshold),
            "passed": bool(passed)}


# --------------------------------------------------------------- gradients

def gradcheck(d=3, d1=5, d2=4, seed=1, h=1e-4, n_inputs=3, tol=1e-5):
    """Central finite differences against the quasi backward pass.

    The objective is the MSE loss of the limit-variance quasi network on a few
    random inputs and targets; every trainable entry is perturbed.
    """
    rng = Rng(seed)
    params = init_params((d, d1, d2), rng=rng.substream("init"))
    params.b1[:] = 0.3 * rng.normal(d2)
    params.theta1[:] *= 0.9  # keep +-h perturbations inside [-1, 1]
    x = random_sphere(rng.substream("x"), n_inputs, d)
    z = rng.normal(n_inputs)

    def loss(p):
        yb = quasi.propagate_moments(p, x, "limit").ybar
        return 0.5 * float(np.sum((yb - z) ** 2))

    st = quasi.propagate_moments(params, x, "limit")
    grad = quasi.quasi_backward(params, x, st, st.ybar - z)
    worst = 0.0
    blocks = {}
    for name, g in (("theta1", grad.d_theta1), ("b1", grad.d_b1), ("w2", grad.d_w2)):
        arr = getattr(params, name)
        fd = np.empty_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = loss(params)
            arr[idx] = old - h
            lm = loss(params)
            arr[idx] = old
            fd[idx] = (lp - lm) / (2.0 * h)
        rel = np.abs(fd - g) / np.maximum(np.maximum(np.abs(fd), np.abs(g)), 1e-8)
        blocks[name] = float(np.max(rel))
        worst = max(worst, blocks[name])
    checks = [_check("max_relative_error", worst, tol, worst < tol)]
    return {"dims": [d, d1, d2], "seed": seed, "h": h, "blocks": blocks,
            "max_relative_error": worst, "checks": checks, "passed": worst < tol}


def verify_gradients(d=16, d1=256, d2=256, n_samples=20000, seed=0, params=None, x=None):
    """Sampled straight-through gradients of y against the quasi gradients.

    For one input, averages d y / d w2, d y / d b1 and d y / d w1 (the
    straight-through gradient applied to theta1) over ``n_samples`` binary
    draws and compares with ``quasi_backward`` on the exact-variance state.
    Each block passes when (a) a fixed random projection of the block has
    |z| < 4 and (b) the largest per-parameter |z| stays below the
    Bonferroni-adjusted threshold matching a single 4-sigma test.
    """
    rng = Rng(seed)
    if params is None:
        params = init_params((d, d1, d2), rng=rng.substream("init"))
    d, d1, d2 = params.dims
    if x is None:
        x = random_sphere(rng.substream("x"), 1, d)[0]
    st = quasi.propagate_moments(params, x, "exact")
    ref = quasi.quasi_backward(params, x, st, 1.0)
    x1 = st.x1
    scale = math.sqrt(params.c / d1)
    sq = math.sqrt(d2)
    w2 = params.w2
    proj = rng.substream("projection")
    r_theta = proj.normal((d1, d2))
    r_b = proj.normal(d2)
    r_w = proj.normal(d2)
    coef_theta = (x1 @ r_theta) * scale * w2 / sq  # projection of theta1 block per indicator
    coef_b = params.beta * w2 * r_b / sq
    coef_w = r_w / sq
    theta = quant.check_buffer(params.theta1)
    key = rng.substream("mc").key()
    n = int(n_samples)
    s_i = np.zeros(d2)
    s_x = np.zeros(d2)
    s_x2 = np.zeros(d2)
    pr = np.zeros((3, 2))
    bias = params.beta * params.b1
    for k in range(n):
        w1 = quant.quantize_with_key(theta, key, start=k * theta.size)
        y1 = scale * (x1 @ w1) + bias
        ind = (y1 > 0.0).astype(np.float64)
        x2 = np.maximum(y1, 0.0)
        s_i += ind
        s_x += x2
        s_x2 += x2 * x2
        for row, val in enumerate((ind @ coef_theta, ind @ coef_b, x2 @ coef_w)):
            pr[row, 0] += val
            pr[row, 1] += val * val
    p_hat = s_i / n
    m_x = s_x / n
    v_i = p_hat * (1.0 - p_hat) * n / (n - 1)
    v_x = np.maximum(s_x2 - n * m_x * m_x, 0.0) / (n - 1)
    p_model = quasi._act_safe(st.nu1, st.varsigma1_sq)[1]
    sd_i = np.sqrt(np.maximum(v_i, p_model * (1.0 - p_model)))
    sd_x = np.sqrt(np.maximum(v_x, st.sigma2_sq))

    def zmax(mean, ref_block, sd):
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(sd > 0, (mean - ref_block) / (sd / math.sqrt(n)),
                         np.where(mean == ref_block, 0.0, np.inf))
        return float(np.max(np.abs(z)))

    blocks = {}
    g_theta_mean = scale * np.outer(x1, w2 * p_hat) / sq
    g_theta_sd = np.abs(scale * np.outer(x1, w2) / sq) * sd_i
    g_b_mean = params.beta * w2 * p_hat / sq
    g_b_sd = np.abs(params.beta * w2 / sq) * sd_i
    g_w_mean = m_x / sq
    g_w_sd = sd_x / sq
    refs = {
        "theta1": (g_theta_mean, ref.d_theta1, g_theta_sd, coef_theta, r_theta),
        "b1": (g_b_mean, ref.d_b1, g_b_sd, coef_b, r_b),
        "w2": (g_w_mean, ref.d_w2, g_w_sd, coef_w, r_w),
    }
    for row, (name, (mean, rblock, sd, _, rvec)) in enumerate(refs.items()):
        pm = pr[row, 0] / n
        pv = max(pr[row, 1] - n * pm * pm, 0.0) / (n - 1)
        z_proj = (pm - float(np.sum(rvec * rblock))) / math.sqrt(pv / n) if pv > 0 else 0.0
        crit = float(-special.ndtri(P_4SIGMA / 2.0 / rblock.size))
        zm = zmax(mean, rblock, sd)
        blocks[name] = {"z_projection": float(z_proj), "max_abs_z": zm,
                        "bonferroni_threshold": crit, "n_params": int(rblock.size),
                        "passed": bool(abs(z_proj) < 4.0 and zm < crit)}
    checks = [_check(f"{k}_projection_z", abs(v["z_projection"]), 4.0, abs(v["z_projection"]) < 4.0)
              for k, v in blocks.items()]
    checks += [_check(f"{k}_max_param_z", v["max_abs_z"], v["bonferroni_threshold"],
                      v["max_abs_z"] < v["bonferroni_threshold"]) for k, v in blocks.items()]
    return {"dims": [d, d1, d2], "n_samples": n, "seed": seed, "blocks": blocks,
            "checks": checks, "passed": all(c["passed"] for c in checks)}


# ------------------------------------------------------------- NTK sweeps

def ntk_convergence(widths=(256, 1024, 4096), seeds=range(5), d=8, n_probes=16,
                    probe_seed=12345, c=1.0, beta=1.0):
    """Relative Frobenius error of empirical vs analytic NTK per width and seed."""
    probes = random_sphere(Rng(probe_seed, ("probes",)), n_probes, d)
    ref = ntk.analytic_gram(probes, "bwnn", c=c, d=d, var_theta=1.0 / 3.0, beta=beta)
    errs = {}
    for w in widths:
        row = []
        for s in seeds:
            p = init_params((d, w, w), c=c, beta=beta, rng=Rng(s, ("ntk-init", w)))
            row.append(ntk.relative_frobenius(ntk.empirical_ntk(p, probes), ref))
        errs[int(w)] = row
    med = {w: float(np.median(v)) for w, v in errs.items()}
    return {"widths": [int(w) for w in widths], "errors": errs, "median": med,
            "analytic_min_eig_ratio": ref.min_eig_ratio()}


@dataclass
class DriftSetup:
    d: int = 8
    m: int = 32
    n_probes: int = 16
    steps: int = 100
    lr: float = 1.0
    weight_decay: float = 0.0
    data_seed: int = 777


def kernel_drift_sweep(widths=(256, 1024, 4096), seeds=range(5), setup=None, mode="quasi"):
    """Kernel drift after a fixed full-batch training budget, per width and seed."""
    setup = setup or DriftSetup()
    data = make_synthetic("random-fourier-target", max(setup.m, 20) * 2, setup.d,
                          seed=setup.data_seed, test_frac=0.5)
    x, z = data.train_arrays()
    x, z = x[:setup.m], z[:setup.m]
    probes = random_sphere(Rng(setup.data_seed, ("drift-probes",)), setup.n_probes, setup.d)
    cfg = TrainConfig(mode=mode, lr=setup.lr, epochs=setup.steps, batch_size=None,
                      weight_decay=setup.weight_decay, record_drift_every=max(1, setup.steps))
    drifts, rel_theta = {}, {}
    for w in widths:
        row, rt = [], []
        for s in seeds:
            p0 = init_params((setup.d, w, w), rng=Rng(s, ("drift-init", w)))
            res = train(p0, (x, z), cfg, rng=Rng(s, ("drift-train", w)))
            row.append(measure_kernel_drift(p0, res.params, probes))
            rt.append(res.drift.theta1[-1] / float(np.linalg.norm(p0.theta1)))
        drifts[int(w)] = row
        rel_theta[int(w)] = rt
    med = {w: float(np.median(v)) for w, v in drifts.items()}
    ws = sorted(med)
    ratios = [med[b] / med[a] for a, b in zip(ws, ws[1:])]
    return {"widths": ws, "drift": drifts, "median": med, "ratios": ratios,
            "theta1_relative_drift": rel_theta, "setup": asdict(setup)}


# ---------------------------------------------------------- generalization

@dataclass
class SuiteConfig:
    width: int = 512
    lr_grid: tuple = (1e-3, 1e-2, 1e-1)
    epochs: int = 100
    batch_size: int = 100
    weight_decay: float = 1e-3
    optimizer: str = "adam"
    val_frac: float = 0.25
    bandwidth_factors: tuple = (0.25, 0.5, 1.0, 2.0, 4.0)
    ridge_grid: tuple = (1e-3, 1e-2, 1e-1)
    c: float = 1.0
    beta: float = 1.0


@dataclass
class ComparisonReport:
    """Per-cell metrics and paired tests on the generalization gaps."""

    cells: list
    pairs: dict

    def as_dict(self):
        return {"cells": self.cells, "pairs": self.pairs}

    def table_csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pair", "n", "t_stat", "p_value", "p_one_sided", "mean_gap_diff",
                    "lower_pct", "higher_pct", "tie_pct", "flag"])
        for name, p in self.pairs.items():
            w.writerow([name, p["n"], repr(p["t"]), repr(p["p"]), repr(p["p_greater"]),
                        repr(p["mean_diff"]), repr(p["lower_pct"]), repr(p["higher_pct"]),
                        repr(p["tie_pct"]), p["flag"]])
        return buf.getvalue()


def accuracy(pred, labels):
    pred = np.asarray(pred)
    if pred.ndim == 1:
        return float(np.mean((pred > 0).astype(np.int64) == labels))
    return float(np.mean(np.argmax(pred, axis=1) == labels))


def _nn_predict(params, x, mode):
    if mode == "real":
        return forward_real(params, x)
    return quasi.propagate_moments(params, x, "limit").ybar


def _fit_network(data, mode, cfg, seed, tr, ev):
    """Train on rows ``tr``; return (params, accuracy on ``ev``) or None on divergence."""
    d = data.inputs.shape[1]
    best = None
    for lr in cfg.lr_grid:
        p0 = init_params((d, cfg.width, cfg.width), c=cfg.c, beta=cfg.beta,
                         rng=Rng(seed, ("suite-init", mode)), n_out=data.n_classes)
        tc = TrainConfig(mode=mode, lr=lr, epochs=cfg.epochs, batch_size=cfg.batch_size,
                         weight_decay=cfg.weight_decay, optimizer=cfg.optimizer,
                         record_drift_every=10 ** 9)
        try:
            res = train(p0, (data.inputs[tr], data.encode(tr)), tc,
                        rng=Rng(seed, ("suite-train", mode)))
        except TrainingDiverged:
            continue
        acc = accuracy(_nn_predict(res.params, data.inputs[ev], mode), data.targets[ev])
        if best is None or acc > best[1]:
            best = (lr, acc)
    return best


def _network_cell(data, mode, cfg, seed):
    rng = Rng(seed, ("suite-val", data.name))
    tr_all = data.train_idx
    perm = rng.permutation(len(tr_all))
    n_val = max(1, int(round(cfg.val_frac * len(tr_all))))
    val, sub = tr_all[np.sort(perm[:n_val])], tr_all[np.sort(perm[n_val:])]
    best = _fit_network(data, mode, cfg, seed, sub, val)
    if best is None:
        return None
    lr = best[0]
    d = data.inputs.shape[1]
    p0 = init_params((d, cfg.width, cfg.width), c=cfg.c, beta=cfg.beta,
                     rng=Rng(seed, ("suite-init", mode)), n_out=data.n_classes)
    tc = TrainConfig(mode=mode, lr=lr, epochs=cfg.epochs, batch_size=cfg.batch_size,
                     weight_decay=cfg.weight_decay, optimizer=cfg.optimizer,
                     record_drift_every=10 ** 9)
    try:
        res = train(p0, data.train_arrays(), tc, rng=Rng(seed, ("suite-train", mode)))
    except TrainingDiverged:
        return None
    tr_acc = accuracy(_nn_predict(res.params, data.inputs[data.train_idx], mode),
                      data.targets[data.train_idx])
    te_acc = accuracy(_nn_predict(res.params, data.inputs[data.test_idx], mode),
                      data.targets[data.test_idx])
    return {"train": tr_acc, "test": te_acc, "lr": lr}


def _distances(a, b):
    g = np.clip(a @ b.T, -1.0, 1.0)
    return np.sqrt(np.maximum(0.0, 2.0 - 2.0 * g))


def _kernel(kind, a, b, bw, cfg, d):
    if kind == "laplace":
        return np.exp(-_distances(a, b) / bw)
    if kind == "gaussian":
        return np.exp(-(_distances(a, b) / bw) ** 2)
    if kind == "bwnn-ntk":
        t = np.clip(a @ b.T, -1.0, 1.0)
        return ntk.analytic_ntk_bwnn(t, cfg.c, d, 1.0 / 3.0, cfg.beta, method="closed-form")
    raise DomainError(f"unknown kernel {kind!r}")


def _kernel_cell(data, kind, cfg, seed):
    rng = Rng(seed, ("suite-val", data.name))
    tr_all = data.train_idx
    perm = rng.permutation(len(tr_all))
    n_val = max(1, int(round(cfg.val_frac * len(tr_all))))
    val, sub = tr_all[np.sort(perm[:n_val])], tr_all[np.sort(perm[n_val:])]
    x = data.inputs
    d = x.shape[1]
    dist = _distances(x[tr_all], x[tr_all])
    med = float(np.median(dist[np.triu_indices(len(tr_all), 1)]))
    bws = [f * med for f in cfg.bandwidth_factors] if kind != "bwnn-ntk" else [1.0]
    best = None
    for bw in bws:
        for lam in cfg.ridge_grid:
            coef = ntk.kernel_ridge_fit(_kernel(kind, x[sub], x[sub], bw, cfg, d),
                                        data.encode(sub), lam)
            acc = accuracy(_kernel(kind, x[val], x[sub], bw, cfg, d) @ coef, data.targets[val])
            if best is None or acc > best[0]:
                best = (acc, bw, lam)
    _, bw, lam = best
    coef = ntk.kernel_ridge_fit(_kernel(kind, x[tr_all], x[tr_all], bw, cfg, d),
                                data.encode(tr_all), lam)
    tr_acc = accuracy(_kernel(kind, x[tr_all], x[tr_all], bw, cfg, d) @ coef, data.targets[tr_all])
    te = data.test_idx
    te_acc = accuracy(_kernel(kind, x[te], x[tr_all], bw, cfg, d) @ coef, data.targets[te])
    return {"train": tr_acc, "test": te_acc, "bandwidth": bw, "ridge": lam}


MODEL_RUNNERS = {
    "real-NN": lambda data, cfg, seed: _network_cell(data, "real", cfg, seed),
    "BWNN": lambda data, cfg, seed: _network_cell(data, "binaryconnect", cfg, seed),
    "laplace": lambda data, cfg, seed: _kernel_cell(data, "laplace", cfg, seed),
    "gaussian": lambda data, cfg, seed: _kernel_cell(data, "gaussian", cfg, seed),
    "bwnn-ntk": lambda data, cfg, seed: _kernel_cell(data, "bwnn-ntk", cfg, seed),
}
DEFAULT_PAIRS = (("real-NN", "BWNN"), ("laplace", "gaussian"))


def generalization_suite(models, datasets, seeds=(0,), cfg=None, pairs=DEFAULT_PAIRS):
    """Fit every model on every (dataset, seed) cell and compare gaps pairwise."""
    cfg = cfg or SuiteConfig()
    if len(datasets) * len(seeds) < 10:
        raise DomainError("need at least 10 (dataset, seed) cells")
    for m in models:
        if m not in MODEL_RUNNERS:
            raise DomainError(f"unknown model {m!r}")
    cells = []
    for data in datasets:
        for s in seeds:
            for m in models:
                r = MODEL_RUNNERS[m](data, cfg, s)
                cell = {"model": m, "dataset": data.name, "seed": int(s)}
                if r is None:
                    cell.update({"diverged": True})
                else:
                    cell.update(r)
                    cell["gap"] = r["train"] - r["test"]
                    cell["diverged"] = False
                cells.append(cell)
    out = {}
    for a, b in pairs:
        if a not in models or b not in models:
            continue
        ga, gb, ta, tb = [], [], [], []
        for data in datasets:
            for s in seeds:
                ca = _find(cells, a, data.name, s)
                cb = _find(cells, b, data.name, s)
                if ca["diverged"] or cb["diverged"]:
                    continue
                ga.append(ca["gap"])
                gb.append(cb["gap"])
                ta.append(ca["test"])
                tb.append(cb["test"])
        res = paired_ttest(ga, gb) if len(ga) >= 2 else TTestResult(0.0, 1.0, 1.0, len(ga), 0.0, "too-few")
        ta, tb = np.array(ta), np.array(tb)
        n = max(len(ta), 1)
        out[f"{a} vs {b}"] = {
            "n": res.n, "t": res.t, "p": res.p, "p_greater": res.p_greater,
            "mean_diff": res.mean_diff, "flag": res.flag,
            "mean_gap_first": float(np.mean(ga)) if ga else float("nan"),
            "mean_gap_second": float(np.mean(gb)) if gb else float("nan"),
            "lower_pct": 100.0 * float(np.sum(ta < tb)) / n,
            "higher_pct": 100.0 * float(np.sum(ta > tb)) / n,
            "tie_pct": 100.0 * float(np.sum(ta == tb)) / n,
        }
    return ComparisonReport(cells, out)


def _find(cells, model, name, seed):
    for c in cells:
        if c["model"] == model and c["dataset"] == name and c["seed"] == seed:
            return c
    raise KeyError((model, name, seed))


def synthetic_suite(n_datasets=20, seed=0, m=300, noise=0.2):
    """A family of seeded two-class datasets with varied dimension and separation."""
    rng = Rng(seed, ("suite-datasets",))
    out = []
    for i in range(int(n_datasets)):
        d = int(rng.integers(4, 17))
        sep = float(rng.uniform(0.5, 1.5))
        out.append(make_synthetic("two-gaussians-on-sphere", m, d, noise=noise,
                                  seed=seed * 1000 + i, separation=sep))
    return out
