"""Pure numpy fallback for the compiled quantization kernel.

Produces exactly the same uniforms and signs as ``_kernels.pyx``; work is done
in blocks so the uint64 temporaries stay bounded for large matrices.
"""
import numpy as np

BACKEND_NAME = "python"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0
_BLOCK = 1 << 20


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _block_uniforms(key, lo, hi):
    ctr = np.arange(lo + 1, hi + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(key) + ctr * _GOLDEN)
    return (h >> np.uint64(11)).astype(np.float64) * _INV53


def uniforms(key, start, n):
    """Return ``n`` uniforms for counters ``start .. start + n - 1``."""
    out = np.empty(n, dtype=np.float64)
    for lo in range(0, n, _BLOCK):
        hi = min(n, lo + _BLOCK)
        out[lo:hi] = _block_uniforms(key, start + lo, start + hi)
    return out


def quantize_pm1(theta, key, start, out):
    """Write +1 where u < (theta + 1) / 2 and -1 elsewhere, in place."""
    n = theta.shape[0]
    if out.shape[0] != n:
        raise ValueError("output buffer has the wrong length")
    for lo in range(0, n, _BLOCK):
        hi = min(n, lo + _BLOCK)
        u = _block_uniforms(key, start + lo, start + hi)
        out[lo:hi] = np.where(u < (theta[lo:hi] + 1.0) * 0.5, 1.0, -1.0)
    return out
