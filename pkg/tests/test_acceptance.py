"""End-to-end acceptance gate.

Each test prints one ``CRITERION n: PASS|FAIL`` line with the measured values
and the pinned thresholds, then asserts.  Runtime budgets are part of the
threshold.  Criteria that are known not to hold are still asserted literally;
they fail here on purpose.
"""
import json
import math
import time

import numpy as np
import pytest
from scipy import integrate

from qbwnn import cli, harness, ntk, quant, quasi, spectrum
from qbwnn.network import init_params
from qbwnn.num_core import Rng, gauss_pdf

pytestmark = pytest.mark.acceptance


def _report(capsys, n, passed, detail):
    line = f"CRITERION {n}: {'PASS' if passed else 'FAIL'} {detail}"
    with capsys.disabled():
        print("\n" + line)
    return line


class _Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


# -------------------------------------------------------------------- 1

def test_criterion_01_quantization_law(capsys):
    n = 100_000
    worst = []
    with _Clock() as clk:
        for i, th in enumerate((-1.0, -0.5, 0.0, 0.5, 1.0)):
            w = quant.quantize(np.full(n, th), Rng(101, ("crit1", i)))
            mean, var = float(np.mean(w)), float(np.var(w, ddof=1))
            v = 1.0 - th * th
            sd_mean = math.sqrt(v / n)
            # 4th central moment of a two-point law with P(+1) = (1 + th) / 2
            p = (1.0 + th) / 2.0
            mu4 = p * (1.0 - th) ** 4 + (1.0 - p) * (1.0 + th) ** 4
            sd_var = math.sqrt(max(mu4 - v * v, 0.0) / n)
            # the sample variance also carries the squared mean error
            tol_var = 4.0 * sd_var + (4.0 * sd_mean) ** 2
            ok = abs(mean - th) <= 4.0 * sd_mean and abs(var - v) <= tol_var
            worst.append((th, mean, var, ok))
    passed = all(ok for *_, ok in worst) and clk.seconds < 5.0
    detail = "; ".join(f"theta={t:+.1f} mean={m:+.5f} var={v:.5f}" for t, m, v, _ in worst)
    _report(capsys, 1, passed, f"{detail}; {clk.seconds:.2f}s (<5s)")
    assert passed


# -------------------------------------------------------------------- 2

def _psi_quad(nu, s):
    f = lambda u: (nu + s * u) * gauss_pdf(u)
    return integrate.quad(f, -nu / s, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)[0]


def _second_moment_quad(nu, s):
    f = lambda u: (nu + s * u) ** 2 * gauss_pdf(u)
    return integrate.quad(f, -nu / s, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)[0]


def test_criterion_02_quasi_activation_oracle(capsys):
    nus = np.linspace(-2.0, 2.0, 9)
    sigmas = (0.25, 0.5, 1.0, 2.0)
    h = 1e-5
    worst_rel, worst_var, worst_fd = 0.0, 0.0, 0.0
    with _Clock() as clk:
        for s in sigmas:
            for nu in nus:
                ref = _psi_quad(nu, s)
                worst_rel = max(worst_rel, abs(quasi.quasi_act(nu, s) - ref) / ref)
                m, v = quasi.relu_moments(nu, s)
                vref = _second_moment_quad(nu, s) - ref * ref
                worst_rel = max(worst_rel, abs(m - ref) / ref)
                worst_var = max(worst_var, abs(v - vref) / vref)
                fd = (quasi.quasi_act(nu + h, s) - quasi.quasi_act(nu - h, s)) / (2 * h)
                worst_fd = max(worst_fd, abs(quasi.quasi_act_grad(nu, s) - fd))
    passed = worst_rel < 5e-4 and worst_var < 5e-4 and worst_fd < 1e-8 and clk.seconds < 10
    _report(capsys, 2, passed,
            f"max rel err psi/mean={worst_rel:.2e} var={worst_var:.2e} (<5e-4, 3 sig. digits); "
            f"max |psi' - central diff|={worst_fd:.2e} (<1e-8); {clk.seconds:.2f}s (<10s)")
    assert passed


# -------------------------------------------------------------------- 3

def test_criterion_03_clt_verification(capsys):
    with _Clock() as clk:
        res = harness.verify_quasi(width=1600, n_samples=1000, n_probes=64, seed=0)
    passed = (res["ks_pass_fraction"] >= 0.95 and res["pearson_r_limit"] > 0.99
              and clk.seconds < 120)
    _report(capsys, 3, passed,
            f"KS<0.05 fraction={res['ks_pass_fraction']:.4f} (>=0.95) over "
            f"{res['n_neurons_tested']} neurons; Pearson r={res['pearson_r_limit']:.6f} (>0.99); "
            f"{clk.seconds:.1f}s (<120s)")
    assert passed


# -------------------------------------------------------------------- 4

def test_criterion_04_gradient_unbiasedness(capsys):
    with _Clock() as clk:
        res = harness.verify_gradients(d1=256, d2=256, n_samples=20000, seed=0)
        gc = harness.gradcheck()
    blocks = ", ".join(f"{k}: |z_proj|={abs(v['z_projection']):.2f} max|z|={v['max_abs_z']:.2f}"
                       f"/{v['bonferroni_threshold']:.2f}" for k, v in res["blocks"].items())
    passed = res["passed"] and gc["max_relative_error"] < 1e-5 and clk.seconds < 180
    _report(capsys, 4, passed,
            f"{blocks}; gradcheck max rel err={gc['max_relative_error']:.2e} (<1e-5); "
            f"{clk.seconds:.1f}s (<180s)")
    assert passed


# -------------------------------------------------------------------- 5

def test_criterion_05_limit_variance(capsys):
    d, d1, d2 = 16, 10_000, 64
    with _Clock() as clk:
        p = init_params((d, d1, d2), theta_init="uniform", rng=Rng(5, ("crit5",)))
        x = harness.random_sphere(Rng(5, ("crit5-x",)), 8, d)
        st = quasi.propagate_moments(p, x, "exact")
        limit = quasi.tilde_varsigma_sq(p.c, d, 1.0 / 3.0)
        dev = float(np.max(np.abs(st.varsigma1_sq - limit)) / limit)
    passed = dev < 0.05 and clk.seconds < 30
    _report(capsys, 5, passed, f"max_j |s_j^2 - limit|/limit={dev:.4f} (<0.05) at d1={d1}, "
            f"8 inputs x {d2} neurons; {clk.seconds:.2f}s (<30s)")
    assert passed


# -------------------------------------------------------------------- 6

def test_criterion_06_ntk_convergence(capsys):
    with _Clock() as clk:
        res = harness.ntk_convergence(widths=(256, 1024, 4096), seeds=range(5), n_probes=16)
    med = [res["median"][w] for w in (256, 1024, 4096)]
    dec = all(b < a for a, b in zip(med, med[1:]))
    passed = med[-1] < 0.05 and dec and clk.seconds < 600
    _report(capsys, 6, passed,
            "median rel. Frobenius err " + ", ".join(f"{w}:{m:.4f}" for w, m in
                                                      zip((256, 1024, 4096), med))
            + f" (4096 <0.05, strictly decreasing={dec}); {clk.seconds:.1f}s (<600s)")
    assert passed


# -------------------------------------------------------------------- 7

def test_criterion_07_kernel_drift(capsys):
    with _Clock() as clk:
        res = harness.kernel_drift_sweep(widths=(256, 1024, 4096), seeds=range(5))
    med = [res["median"][w] for w in res["widths"]]
    ratios = res["ratios"]
    in_band = all(0.3 <= r <= 0.8 for r in ratios)
    dec = all(b < a for a, b in zip(med, med[1:]))
    passed = in_band and dec and clk.seconds < 900
    _report(capsys, 7, passed,
            "median drift " + ", ".join(f"{w}:{m:.5f}" for w, m in zip(res["widths"], med))
            + "; ratios " + ", ".join(f"{r:.3f}" for r in ratios)
            + f" (each in [0.3, 0.8]: {in_band}); strictly decreasing={dec}; "
              f"{clk.seconds:.1f}s (<900s)")
    assert passed


# -------------------------------------------------------------------- 8

def test_criterion_08_spectral_parity(capsys):
    with _Clock() as clk:
        lam, lamp = spectrum.activation_coeffs(1.0, 5, 24)
    forb = max(lam.meta["forbidden_mass"], lamp.meta["forbidden_mass"])
    pos = lam.meta["supported_positive_k20"] and lamp.meta["supported_positive_k20"]
    neg_even = [k for k in range(0, 21, 2) if lam.coeffs[k] <= 0]
    neg_odd = [k for k in range(1, 21, 2) if lamp.coeffs[k] <= 0]
    passed = forb < 1e-9 and pos and clk.seconds < 30
    _report(capsys, 8, passed,
            f"forbidden-parity mass={forb:.1e} (<1e-9); supported coefficients positive for "
            f"k<=20: {pos} (non-positive even k of psi: {neg_even}, odd k of psi': {neg_odd}); "
            f"{clk.seconds:.1f}s (<30s)")
    assert passed


# -------------------------------------------------------------------- 9

def test_criterion_09_decay_contrast(capsys):
    with _Clock() as clk:
        bw = spectrum.kernel_eigen_bwnn(1.0, 3, 1.0 / 3.0, 1.0, kmax=40)
        rl = spectrum.kernel_eigen_relu(1.0, 3, kmax=40)
        rg = spectrum.kernel_eigen_rgauss(3, 2.0, 40)
        fb = spectrum.fit_decay(bw, (6, 30), "even")
        fr = spectrum.fit_decay(rl, (6, 30), "even")
        fg = spectrum.fit_decay(rg, (6, 30), "even")
    target = spectrum.asymptotic_ratio(1.0 / 3.0)
    ratio = spectrum.coefficient_ratio(bw, 28)
    rel = abs(ratio - target) / target
    per_degree = abs(math.sqrt(ratio) - target) / target
    contrast = (fb.exponential.r2 > fb.power.r2 and fr.power.r2 > fr.exponential.r2
                and 2.0 <= fr.exponent <= 4.0 and fg.exponential.r2 > 0.99)
    passed = contrast and rel <= 0.30 and clk.seconds < 120
    _report(capsys, 9, passed,
            f"BWNN r2 exp={fb.exponential.r2:.5f} pow={fb.power.r2:.5f}; "
            f"ReLU r2 pow={fr.power.r2:.5f} exp={fr.exponential.r2:.5f} p={fr.exponent:.3f} "
            f"(in [2, 4]); RGauss r2 exp={fg.exponential.r2:.6f} (>0.99); "
            f"u30/u28={ratio:.5f} vs {target:.5f}: {100 * rel:.0f}% off (<=30%) "
            f"[per-degree sqrt ratio {100 * per_degree:.0f}% off]; {clk.seconds:.1f}s (<120s)")
    assert passed


# -------------------------------------------------------------------- 10

def test_criterion_10_rgauss_closed_form(capsys):
    d, xi = 3, 2.0
    rows = []
    with _Clock() as clk:
        for i, t in enumerate((-1.0, -0.5, 0.0, 0.5, 0.9)):
            m, se = spectrum.rgauss_kernel_mc(t, d, xi, 1_000_000, Rng(10, ("crit10", i)))
            ref = spectrum.rgauss_kernel(t, d, xi)
            rows.append((t, m, ref, abs(m - ref) / se))
    passed = all(z < 4.0 for *_, z in rows) and clk.seconds < 30
    _report(capsys, 10, passed, "; ".join(f"t={t:+.1f} mc={m:.6f} exact={r:.6f} |z|={z:.2f}"
                                          for t, m, r, z in rows)
            + f" (|z|<4); {clk.seconds:.1f}s (<30s)")
    assert passed


# -------------------------------------------------------------------- 11

def test_criterion_11_generalization_direction(capsys):
    with _Clock() as clk:
        datasets = harness.synthetic_suite(20, seed=0)
        rep = harness.generalization_suite(["real-NN", "BWNN", "laplace", "gaussian"], datasets)
    nn = rep.pairs["real-NN vs BWNN"]
    kr = rep.pairs["laplace vs gaussian"]
    passed = (nn["p_greater"] < 0.1 and kr["p_greater"] < 0.1 and nn["n"] >= 20
              and kr["n"] >= 20 and clk.seconds < 1800)
    _report(capsys, 11, passed,
            f"NN-BWNN gap {nn['mean_gap_first']:.4f} vs {nn['mean_gap_second']:.4f} "
            f"t={nn['t']:.3f} p1={nn['p_greater']:.4f} (<0.1); Laplace-Gaussian gap "
            f"{kr['mean_gap_first']:.4f} vs {kr['mean_gap_second']:.4f} t={kr['t']:.3f} "
            f"p1={kr['p_greater']:.4f} (<0.1); n={nn['n']}; {clk.seconds:.0f}s (<1800s)")
    assert passed


# -------------------------------------------------------------------- 12

REPLAY_RUNS = [
    ["gradcheck"],
    ["train", "--d1", "64", "--d2", "32", "--epochs", "3", "--data-m", "60"],
    ["train", "--d1", "64", "--d2", "32", "--epochs", "2", "--mode", "binaryconnect"],
    ["ntk", "--ntk-kind", "empirical", "--d1", "128", "--d2", "128", "--probes", "6"],
    ["spectrum", "--kernel", "rgauss", "--dim", "3", "--xi", "2", "--kmax", "40"],
    ["verify-quasi", "--width", "200", "--samples", "500", "--probes", "4"],
]


def test_criterion_12_replay(tmp_path, capsys):
    outcomes = []
    for i, argv in enumerate(REPLAY_RUNS):
        path = tmp_path / f"r{i}.json"
        cli.main(argv + ["--report", str(path)])
        same, old, new = cli.replay(path)
        outcomes.append((argv[0], same and cli.report_text(old["results"])
                         == cli.report_text(new["results"])))
    capsys.readouterr()
    passed = all(ok for _, ok in outcomes)
    _report(capsys, 12, passed, ", ".join(f"{n}:{'identical' if ok else 'DIFFERS'}"
                                          for n, ok in outcomes))
    assert passed
