"""Dataset ingestion and emission: CSV tables and IDX (MNIST-style) files.

All rows are L2-normalized on the way in, since the networks expect inputs on
the unit sphere.
"""
import csv
import io
import json
import math
import struct

import numpy as np

from .errors import DataError
from .harness import Dataset, split_indices
from .network import atomic_write_bytes
from .num_core import Rng

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def _normalize_rows(x, what="row"):
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(~(norms > 0.0) | ~np.isfinite(norms))
    if len(bad):
        raise DataError(f"{what} {int(bad[0]) + 1} has zero norm and cannot be normalized")
    return x / norms[:, None]


def _splits(m, test_frac, seed):
    if test_frac <= 0.0:
        return np.arange(m), np.array([], dtype=np.int64)
    return split_indices(m, test_frac, Rng(seed, ("split",)))


def load_csv(path, label_column="label", test_frac=0.0, seed=0, task="classification"):
    """Read a header-first CSV of numeric features plus one label column.

    Labels are mapped to class indices in first-seen order (classification) or
    parsed as floats (regression).  Rows keep their file order.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise DataError(f"label column {label_column!r} not found in header")
    li = header.index(label_column)
    feat_cols = [i for i in range(len(header)) if i != li]
    if not feat_cols:
        raise DataError("no feature columns")
    feats, labels = [], []
    for r, row in enumerate(rows[1:], start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"row {r} has {len(row)} cells, expected {len(header)}")
        vals = []
        for i in feat_cols:
            try:
                v = float(row[i])
            except ValueError:
                raise DataError(f"row {r}, column {header[i]!r}: non-numeric cell {row[i]!r}") from None
            if not math.isfinite(v):
                raise DataError(f"row {r}, column {header[i]!r}: non-finite value")
            vals.append(v)
        feats.append(vals)
        labels.append(row[li].strip())
    if not feats:
        raise DataError(f"{path} has no data rows")
    x = _normalize_rows(np.array(feats, dtype=np.float64))
    if task == "classification":
        classes = list(dict.fromkeys(labels))
        lookup = {c: k for k, c in enumerate(classes)}
        targets = np.array([lookup[v] for v in labels], dtype=np.int64)
    else:
        try:
            targets = np.array([float(v) for v in labels])
        except ValueError as exc:
            raise DataError(f"non-numeric regression label: {exc}") from None
        classes = []
    tr, te = _splits(len(x), test_frac, seed)
    return Dataset(x, targets, tr, te, str(path), seed, task, classes)


def csv_text(dataset, label_column="label"):
    """CSV encoding of a dataset (features f0..f{d-1}, then the label)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = dataset.inputs.shape[1]
    w.writerow([f"f{i}" for i in range(d)] + [label_column])
    for row, t in zip(dataset.inputs, dataset.targets):
        lab = dataset.classes[int(t)] if dataset.task == "classification" else repr(float(t))
        w.writerow([repr(float(v)) for v in row] + [lab])
    return buf.getvalue()


def write_csv(dataset, path, label_column="label"):
    atomic_write_bytes(path, csv_text(dataset, label_column).encode("utf-8"))


def read_idx(path, expected_magic):
    """Parse one IDX file of unsigned bytes; checks magic and payload length."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 4:
        raise DataError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataError(f"{path}: magic 0x{magic:08x} != expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    hdr = 4 + 4 * ndim
    if len(raw) < hdr:
        raise DataError(f"{path}: truncated dimension block")
    dims = struct.unpack(f">{ndim}I", raw[4:hdr])
    size = int(np.prod(dims, dtype=np.int64))
    payload = raw[hdr:]
    if len(payload) != size:
        raise DataError(f"{path}: payload has {len(payload)} bytes, dims {dims} need {size}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def idx_bytes(array, magic):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    if (magic & 0xFF) != array.ndim:
        raise DataError("magic dimension count does not match the array")
    return struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()


def write_idx(path, array, magic):
    atomic_write_bytes(path, idx_bytes(array, magic))


def load_idx(images_path, labels_path, n=None, seed=0, test_frac=0.0):
    """MNIST-style pair: pixels scaled to [0, 1], flattened, L2-normalized.

    When ``n`` is given, that many rows are drawn without replacement using
    ``seed``; the chosen indices come back sorted.
    """
    images = read_idx(images_path, IDX_IMAGES)
    labels = read_idx(labels_path, IDX_LABELS)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    idx = np.arange(images.shape[0])
    if n is not None:
        n = int(n)
        if not 1 <= n <= len(idx):
            raise DataError(f"subsample size {n} outside [1, {len(idx)}]")
        idx = np.sort(Rng(seed, ("idx-subsample",)).choice(len(idx), n, replace=False))
    x = images[idx].reshape(len(idx), -1).astype(np.float64) / 255.0
    x = _normalize_rows(x, "image")
    lab = labels[idx].astype(np.int64)
    classes = sorted(set(int(v) for v in lab))
    lookup = {c: k for k, c in enumerate(classes)}
    targets = np.array([lookup[int(v)] for v in lab], dtype=np.int64)
    tr, te = _splits(len(x), test_frac, seed)
    ds = Dataset(x, targets, tr, te, str(images_path), seed, "classification",
                 [str(c) for c in classes])
    ds.source_index = idx
    return ds


def write_json(path, obj):
    """Stable-key UTF-8 JSON, written atomically."""
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))
