"""Run configuration: flat JSON files plus command-line overrides."""
import json
import math
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError

COMMANDS = ("verify-quasi", "gradcheck", "train", "ntk", "spectrum", "drift", "compare")
KERNELS = ("bwnn", "relu", "rgauss", "laplace", "gaussian")


@dataclass
class RunConfig:
    """Every knob a CLI run can set.  ``None`` means "command default"."""

    command: str = "gradcheck"
    d: int | None = None
    d1: int | None = None
    d2: int | None = None
    c: float = 1.0
    beta: float = 1.0
    theta_init: str = "uniform"
    theta_scale: float = 1.0
    var_theta: float = 1.0 / 3.0
    lr: float | None = None
    epochs: int | None = None
    batch_size: int | None = None
    weight_decay: float | None = None
    optimizer: str | None = None
    mode: str | None = None
    seed: int = 0
    quad_order: int = 64
    kmax: int = 40
    fit_kmin: int = 6
    fit_kmax: int = 30
    kernel: str = "bwnn"
    xi: float = 2.0
    ntk_kind: str = "analytic"
    samples: int | None = None
    probes: int | None = None
    widths: str | None = None
    seeds: int | None = None
    n_datasets: int = 20
    data_m: int | None = None
    dataset: str = "two-gaussians-on-sphere"
    data_in: str | None = None
    labels_in: str | None = None
    label_column: str = "label"
    subsample: int | None = None
    test_frac: float = 0.5
    report_out: str | None = None
    csv_out: str | None = None
    checkpoint_out: str | None = None

    def as_dict(self):
        return asdict(self)


# Per-command defaults fill the None fields so the echoed config is complete.
COMMAND_DEFAULTS = {
    "verify-quasi": dict(d=16, d1=1600, d2=64, samples=1000, probes=64),
    "gradcheck": dict(d=3, d1=5, d2=4),
    "train": dict(d=8, d1=256, d2=256, lr=0.1, epochs=10, batch_size=32, weight_decay=1e-3,
                  optimizer="sgd", mode="quasi", data_m=200),
    "ntk": dict(d=8, d1=1024, d2=1024, probes=16),
    "spectrum": dict(d=3),
    "drift": dict(d=8, widths="256,1024,4096", seeds=5, lr=1.0, epochs=100, weight_decay=0.0,
                  mode="quasi", probes=16, data_m=32),
    "compare": dict(d1=512, lr=None, epochs=100, batch_size=100, weight_decay=1e-3,
                    optimizer="adam", data_m=300),
}

_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


_BOUNDS = {
    "d": (lambda v: 1 <= v <= 100000, "must be in [1, 100000]"),
    "d1": (lambda v: 1 <= v <= 1000000, "must be in [1, 1000000]"),
    "d2": (lambda v: 1 <= v <= 1000000, "must be in [1, 1000000]"),
    "c": (_pos, "must be > 0"),
    "beta": (_nonneg, "must be >= 0"),
    "theta_scale": (lambda v: 0 < v <= 1, "must be in (0, 1]"),
    "var_theta": (lambda v: 0 < v < 1, "must be in (0, 1)"),
    "lr": (_pos, "must be > 0"),
    "epochs": (_nonneg, "must be >= 0"),
    "batch_size": (_pos, "must be >= 1"),
    "weight_decay": (_nonneg, "must be >= 0"),
    "seed": (lambda v: 0 <= v < 2 ** 63, "must be in [0, 2^63)"),
    "quad_order": (lambda v: 2 <= v <= 4096, "must be in [2, 4096]"),
    "kmax": (lambda v: 1 <= v <= 64, "must be in [1, 64]"),
    "fit_kmin": (_nonneg, "must be >= 0"),
    "fit_kmax": (_pos, "must be >= 1"),
    "xi": (_pos, "must be > 0"),
    "samples": (_pos, "must be >= 1"),
    "probes": (lambda v: v >= 2, "must be >= 2"),
    "seeds": (_pos, "must be >= 1"),
    "n_datasets": (_pos, "must be >= 1"),
    "data_m": (lambda v: v >= 4, "must be >= 4"),
    "subsample": (_pos, "must be >= 1"),
    "test_frac": (lambda v: 0 <= v < 1, "must be in [0, 1)"),
}
_CHOICES = {
    "command": COMMANDS,
    "theta_init": ("uniform", "scaled-uniform"),
    "optimizer": ("sgd", "adam"),
    "mode": ("binaryconnect", "quasi", "real"),
    "kernel": KERNELS,
    "ntk_kind": ("empirical", "analytic"),
    "dataset": ("two-gaussians-on-sphere", "random-fourier-target"),
}


def _coerce(key, value):
    typ = _TYPES[key]
    if value is None:
        if "None" in str(typ):
            return None
        raise ConfigError(key, "may not be null")
    base = str(typ).split("|")[0].strip()
    if base == "int" or typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, str):
                try:
                    return int(value)
                except ValueError:
                    pass
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if base == "float" or typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        try:
            v = float(value)
        except ValueError:
            raise ConfigError(key, f"expected a number, got {value!r}") from None
        if not math.isfinite(v):
            raise ConfigError(key, "must be finite")
        return v
    if not isinstance(value, str):
        raise ConfigError(key, f"expected a string, got {value!r}")
    return value


def _widths(text):
    try:
        ws = [int(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise ConfigError("widths", f"expected comma-separated integers, got {text!r}") from None
    if len(ws) < 2 or any(w < 1 for w in ws):
        raise ConfigError("widths", "need at least two positive widths")
    return ws


def read_config_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config", "config file must hold a JSON object")
    for k, v in obj.items():
        if isinstance(v, (dict, list)):
            raise ConfigError(k, "values must be scalars")
    return obj


def parse_config(file_values=None, flags=None):
    """Merge file values and flags (flags win), fill defaults, validate.

    Both inputs are plain mappings; ``None`` entries in ``flags`` mean the
    flag was not given.
    """
    merged = {}
    for src in (file_values or {}, {k: v for k, v in (flags or {}).items() if v is not None}):
        for k, v in src.items():
            if k not in _TYPES:
                raise ConfigError(k, "unknown key")
            merged[k] = _coerce(k, v)
    command = merged.get("command", RunConfig.command)
    if command not in COMMANDS:
        raise ConfigError("command", f"must be one of {COMMANDS}")
    for k, v in COMMAND_DEFAULTS[command].items():
        if merged.get(k) is None:
            merged[k] = v
    cfg = RunConfig(**merged)
    for k, v in cfg.as_dict().items():
        if v is None:
            continue
        if k in _BOUNDS and not _BOUNDS[k][0](v):
            raise ConfigError(k, f"{_BOUNDS[k][1]}, got {v!r}")
        if k in _CHOICES and v not in _CHOICES[k]:
            raise ConfigError(k, f"must be one of {_CHOICES[k]}, got {v!r}")
    if cfg.widths is not None:
        _widths(cfg.widths)
    if cfg.fit_kmin >= cfg.fit_kmax:
        raise ConfigError("fit_kmin", "must be below fit_kmax")
    return cfg


def widths_of(cfg):
    return _widths(cfg.widths)
