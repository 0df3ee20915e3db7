"""Stochastic binary quantization of a real buffer.

Each entry theta in [-1, 1] maps to +1 with probability (theta + 1) / 2 and to
-1 otherwise, so E[w] = theta and Var[w] = 1 - theta^2.  Uniforms come from a
counter-based hash keyed by one draw of the caller's Rng, which makes the
result independent of the kernel backend and of how the matrix is split.
"""
import numpy as np

from . import backend
from .errors import DomainError

THETA_TOL = 1e-12


def check_buffer(theta):
    """Validate a buffer and clamp float drift of at most ``THETA_TOL``.

    Returns a C-contiguous float64 copy.  Entries outside [-1, 1] by more than
    the tolerance mean the caller forgot to clip, and are rejected.
    """
    arr = np.array(theta, dtype=np.float64, order="C", copy=True)
    if not np.all(np.isfinite(arr)):
        raise DomainError("quantization buffer contains non-finite values")
    if arr.size and float(np.max(np.abs(arr))) > 1.0 + THETA_TOL:
        worst = float(np.max(np.abs(arr)))
        raise DomainError(f"theta outside [-1, 1] (max |theta| = {worst!r})")
    np.clip(arr, -1.0, 1.0, out=arr)
    return arr


def quantize_with_key(theta, key, start=0):
    """Quantize with an explicit stream key and counter offset.

    ``theta`` must already be a valid buffer; the counter of entry ``i`` in
    flattened C order is ``start + i``.
    """
    flat = np.ascontiguousarray(theta, dtype=np.float64).ravel()
    out = np.empty_like(flat)
    backend.quantize_pm1(flat, int(key), int(start), out)
    return out.reshape(np.shape(theta))


def quantize(theta, rng, deterministic=False):
    """Draw binary weights from the buffer ``theta``.

    With ``deterministic=True`` the sign of theta is returned instead (zero
    maps to +1) and ``rng`` is not consumed.
    """
    buf = check_buffer(theta)
    if deterministic:
        return np.where(buf >= 0.0, 1.0, -1.0)
    return quantize_with_key(buf, rng.key())


def quantize_mean_var(theta):
    """Conditional mean and variance of a quantized entry: (theta, 1 - theta^2)."""
    t = check_buffer(theta)
    mean, var = t, 1.0 - t * t
    if np.ndim(theta) == 0:
        return float(mean), float(var)
    return mean, var
