"""Command-line entry point: ``qbwnn <command> [flags]``.

Every run writes one JSON report holding the effective config, seed, code and
RNG versions, the results and a list of threshold checks.  Exit codes: 0 all
checks pass, 1 a threshold failed, 2 usage or config error, 3 data error.
"""
import argparse
import json
import math
import sys

import numpy as np

from . import __version__, harness, ntk, spectrum
from .backend import BACKEND
from .config import COMMANDS, parse_config, read_config_file, widths_of
from .dataio import load_csv, load_idx
from .errors import ConfigError, DataError, DomainError, TrainingDiverged
from .network import atomic_write_bytes, init_params, save_params
from .num_core import Rng, rng_version
from .trainer import TrainConfig, clip_check, evaluate_loss, train

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


def _check(name, value, threshold, passed):
    return {"name": name, "value": value, "threshold": threshold, "passed": bool(passed)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _load_dataset(cfg):
    if cfg.data_in is None:
        return harness.make_synthetic(cfg.dataset, cfg.data_m, cfg.d, noise=0.1, seed=cfg.seed)
    if cfg.labels_in is not None:
        return load_idx(cfg.data_in, cfg.labels_in, cfg.subsample, cfg.seed, cfg.test_frac)
    return load_csv(cfg.data_in, cfg.label_column, cfg.test_frac, cfg.seed)


# ------------------------------------------------------------- commands

def _run_verify_quasi(cfg):
    res = harness.verify_quasi(width=cfg.d1, n_samples=cfg.samples, n_probes=cfg.probes,
                               seed=cfg.seed, d=cfg.d, d2=cfg.d2)
    return res, res.pop("checks")


def _run_gradcheck(cfg):
    res = harness.gradcheck(d=cfg.d, d1=cfg.d1, d2=cfg.d2, seed=cfg.seed)
    return res, res.pop("checks")


def _run_train(cfg):
    data = _load_dataset(cfg)
    d = data.inputs.shape[1]
    rng = Rng(cfg.seed)
    n_out = data.n_classes if data.task == "classification" else 1
    p0 = init_params((d, cfg.d1, cfg.d2), c=cfg.c, beta=cfg.beta, theta_init=cfg.theta_init,
                     scale=cfg.theta_scale, rng=rng.substream("init"), n_out=n_out)
    tc = TrainConfig(mode=cfg.mode, lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size,
                     weight_decay=cfg.weight_decay, seed=cfg.seed, optimizer=cfg.optimizer)
    x, z = data.train_arrays()
    loss0 = evaluate_loss(p0, x, z if n_out > 1 else z.reshape(-1, 1), cfg.mode)
    try:
        res = train(p0, data, tc, rng=rng.substream("train"))
    except TrainingDiverged as exc:
        out = {"diverged_at_step": exc.step, "loss": exc.loss, "data_dim": d}
        return out, [_check("diverged", exc.step, None, False)]
    if cfg.csv_out:
        res.drift.to_csv(cfg.csv_out)
    if cfg.checkpoint_out:
        save_params(res.params, cfg.checkpoint_out)
    pred_mode = "real" if cfg.mode == "real" else "quasi"
    out = {"data_dim": d, "n_train": int(len(data.train_idx)), "n_test": int(len(data.test_idx)),
           "initial_loss": loss0, "final_loss": res.drift.losses[-1],
           "clip_fraction": clip_check(res.params), "drift": res.drift.as_dict(),
           "fingerprint": res.params.fingerprint()}
    if len(data.test_idx):
        xt, zt = data.test_arrays()
        out["test_loss"] = evaluate_loss(res.params, xt, zt if n_out > 1 else zt.reshape(-1, 1),
                                         cfg.mode)
        if data.task == "classification":
            pred = harness._nn_predict(res.params, xt, pred_mode)
            out["test_accuracy"] = harness.accuracy(pred, data.targets[data.test_idx])
    checks = [_check("final_loss_finite", out["final_loss"], None, math.isfinite(out["final_loss"])),
              _check("loss_not_increased", out["final_loss"], loss0, out["final_loss"] <= loss0)]
    return out, checks


def _run_ntk(cfg):
    probes = harness.random_sphere(Rng(cfg.seed, ("probes",)), cfg.probes, cfg.d)
    ref = ntk.analytic_gram(probes, "bwnn", c=cfg.c, d=cfg.d, var_theta=cfg.var_theta,
                            beta=cfg.beta, order=cfg.quad_order)
    out = {"n_probes": cfg.probes}
    if cfg.ntk_kind == "empirical":
        p = init_params((cfg.d, cfg.d1, cfg.d2), c=cfg.c, beta=cfg.beta, theta_init=cfg.theta_init,
                        scale=cfg.theta_scale, rng=Rng(cfg.seed, ("init",)))
        km = ntk.empirical_ntk(p, probes)
        out["relative_frobenius_to_analytic"] = ntk.relative_frobenius(km, ref)
    else:
        km = ref
    out.update({"provenance": km.provenance, "symmetry_error": km.symmetry_error(),
                "min_eig_ratio": km.min_eig_ratio(), "gram": km.gram})
    if cfg.csv_out:
        km.to_csv(cfg.csv_out)
    return out, [_check("valid_gram", km.min_eig_ratio(), -ntk.PSD_TOL, km.is_valid())]


def _spectrum_table(cfg):
    if cfg.kernel == "bwnn":
        return spectrum.kernel_eigen_bwnn(cfg.c, cfg.d, cfg.var_theta, cfg.beta, cfg.kmax)
    if cfg.kernel == "relu":
        return spectrum.kernel_eigen_relu(cfg.c, cfg.d, cfg.beta, kmax=cfg.kmax)
    if cfg.kernel == "rgauss":
        return spectrum.kernel_eigen_rgauss(cfg.d, cfg.xi, cfg.kmax)
    # Laplace and Gaussian use 1/xi as their scale: exp(-|x-x'|/xi), exp(-|x-x'|^2/xi^2)
    if cfg.kernel == "laplace":
        return spectrum.kernel_eigen_laplace(cfg.d, 1.0 / cfg.xi, cfg.kmax)
    return spectrum.kernel_eigen_gaussian(cfg.d, 1.0 / cfg.xi, cfg.kmax)


def _run_spectrum(cfg):
    table = _spectrum_table(cfg)
    window = (cfg.fit_kmin, min(cfg.fit_kmax, cfg.kmax))
    fit = spectrum.fit_decay(table, window, parity="even")
    r2e, r2p = fit.exponential.r2, fit.power.r2
    checks = [_check("converged", table.converged, True, table.converged)]
    if cfg.kernel in ("bwnn", "rgauss", "gaussian"):
        checks.append(_check("exponential_beats_power", r2e, r2p, r2e > r2p))
    else:
        checks.append(_check("power_beats_exponential", r2p, r2e, r2p > r2e))
    if cfg.kernel in ("rgauss", "gaussian"):
        checks.append(_check("exponential_r2", r2e, 0.99, r2e > 0.99))
    if cfg.kernel == "relu":
        p = fit.exponent
        checks.append(_check("power_exponent_in_range", p, [cfg.d - 1, cfg.d + 1],
                             cfg.d - 1 <= p <= cfg.d + 1))
    if cfg.csv_out:
        table.to_csv(cfg.csv_out, cfg.csv_out + ".fit.json")
    out = {"kernel": cfg.kernel, "n_rows": len(table.coeffs), "coeffs": table.coeffs,
           "fit": fit.as_dict(), "meta": table.meta, "converged": table.converged}
    return out, checks


def _run_drift(cfg):
    setup = harness.DriftSetup(d=cfg.d, m=cfg.data_m, n_probes=cfg.probes, steps=cfg.epochs,
                               lr=cfg.lr, weight_decay=cfg.weight_decay)
    seeds = range(cfg.seed, cfg.seed + cfg.seeds)
    res = harness.kernel_drift_sweep(widths_of(cfg), seeds, setup, mode=cfg.mode)
    ratios = res["ratios"]
    meds = [res["median"][w] for w in res["widths"]]
    checks = [_check(f"ratio_{a}_{b}", r, [0.3, 0.8], 0.3 <= r <= 0.8)
              for a, b, r in zip(res["widths"], res["widths"][1:], ratios)]
    checks.append(_check("strictly_decreasing", meds, None,
                         all(b < a for a, b in zip(meds, meds[1:]))))
    if cfg.csv_out:
        lines = ["width,seed,drift"]
        for w in res["widths"]:
            for s, v in zip(seeds, res["drift"][w]):
                lines.append(f"{w},{s},{v!r}")
        atomic_write_bytes(cfg.csv_out, ("\n".join(lines) + "\n").encode("utf-8"))
    return res, checks


def _run_compare(cfg):
    scfg = harness.SuiteConfig(width=cfg.d1, epochs=cfg.epochs, batch_size=cfg.batch_size,
                               weight_decay=cfg.weight_decay, optimizer=cfg.optimizer,
                               c=cfg.c, beta=cfg.beta)
    if cfg.lr is not None:
        scfg.lr_grid = (cfg.lr,)
    if cfg.data_in is None:
        datasets = harness.synthetic_suite(cfg.n_datasets, cfg.seed, m=cfg.data_m)
        seeds = (0,)
    else:
        datasets = [_load_dataset(cfg)]
        seeds = tuple(range(cfg.seeds or 10))
    models = ["real-NN", "BWNN", "laplace", "gaussian"]
    rep = harness.generalization_suite(models, datasets, seeds, scfg)
    if cfg.csv_out:
        atomic_write_bytes(cfg.csv_out, rep.table_csv_text().encode("utf-8"))
    checks = [_check(f"{name}: one-sided p", p["p_greater"], 0.1, p["p_greater"] < 0.1)
              for name, p in rep.pairs.items()]
    return rep.as_dict(), checks


RUNNERS = {
    "verify-quasi": _run_verify_quasi, "gradcheck": _run_gradcheck, "train": _run_train,
    "ntk": _run_ntk, "spectrum": _run_spectrum, "drift": _run_drift, "compare": _run_compare,
}


def run_command(cfg):
    """Run one configured command; returns (exit code, report dict)."""
    results, checks = RUNNERS[cfg.command](cfg)
    failures = [c["name"] for c in checks if not c["passed"]]
    report = {
        "command": cfg.command, "config": cfg.as_dict(), "seed": cfg.seed,
        "code_version": __version__, "rng_version": rng_version(), "backend": BACKEND,
        "results": results, "checks": checks, "failures": failures, "passed": not failures,
    }
    return (EXIT_PASS if not failures else EXIT_FAIL), _jsonable(report)


def report_text(report):
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def replay(path):
    """Re-run the config embedded in a report; (identical, old, new)."""
    try:
        with open(path, encoding="utf-8") as fh:
            old = json.load(fh)
        values = old["config"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc
    values = dict(values, report_out=None)
    cfg = parse_config(values)
    _, new = run_command(cfg)
    new["config"]["report_out"] = old["config"].get("report_out")
    keys = ("results", "checks", "failures", "passed", "rng_version", "code_version")
    same = all(report_text(old.get(k)) == report_text(new.get(k)) for k in keys)
    return same, old, new


# ------------------------------------------------------------- argument parsing

# flag -> (config key, type)
_FLAGS = [
    (("--d", "--dim"), "d", int), (("--d1", "--width"), "d1", int), (("--d2",), "d2", int),
    (("--c",), "c", float), (("--beta",), "beta", float), (("--theta-init",), "theta_init", str),
    (("--theta-scale",), "theta_scale", float), (("--var-theta",), "var_theta", float),
    (("--lr",), "lr", float), (("--epochs", "--steps"), "epochs", int),
    (("--batch-size",), "batch_size", int), (("--weight-decay",), "weight_decay", float),
    (("--optimizer",), "optimizer", str), (("--mode",), "mode", str), (("--seed",), "seed", int),
    (("--quad-order",), "quad_order", int), (("--kmax",), "kmax", int),
    (("--fit-kmin",), "fit_kmin", int), (("--fit-kmax",), "fit_kmax", int),
    (("--kernel",), "kernel", str), (("--xi",), "xi", float), (("--ntk-kind",), "ntk_kind", str),
    (("--samples",), "samples", int), (("--probes",), "probes", int),
    (("--widths",), "widths", str), (("--seeds",), "seeds", int),
    (("--n-datasets",), "n_datasets", int), (("--data-m",), "data_m", int),
    (("--dataset",), "dataset", str), (("--data-in",), "data_in", str),
    (("--labels-in",), "labels_in", str), (("--label-column",), "label_column", str),
    (("--subsample",), "subsample", int), (("--test-frac",), "test_frac", float),
    (("--report", "--report-out"), "report_out", str), (("--csv", "--csv-out"), "csv_out", str),
    (("--checkpoint",), "checkpoint_out", str),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "usage", "message": message}) + "\n")
        raise SystemExit(EXIT_CONFIG)


def build_parser():
    parser = _Parser(prog="qbwnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qbwnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", dest="config_file", default=None,
                        help="JSON object of config keys; flags override it")
        for names, key, typ in _FLAGS:
            # strings are passed through so bounds errors name the config key
            sp.add_argument(*names, dest=key, default=None, type=str,
                            help=f"config key {key} ({typ.__name__})")
    rp = sub.add_parser("replay", help="re-run a report's config and compare")
    rp.add_argument("report")
    return parser


def _fail(code, kind, message, key=None):
    err = {"error": kind, "message": message}
    if key is not None:
        err["key"] = key
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            same, _, new = replay(args.report)
            sys.stdout.write(report_text({"replay_identical": same, "report": new}))
            return EXIT_PASS if same else EXIT_FAIL
        values = vars(args).copy()
        file_values = read_config_file(values.pop("config_file")) if args.config_file else {}
        file_values.pop("command", None)
        cfg = parse_config(file_values, values)
        code, report = run_command(cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc), exc.key)
    except DataError as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except DomainError as exc:
        return _fail(EXIT_CONFIG, "domain", str(exc))
    text = report_text(report)
    if cfg.report_out:
        atomic_write_bytes(cfg.report_out, text.encode("utf-8"))
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
