# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled counter-based uniform generator and stochastic sign quantizer.

Each uniform is the splitmix64 finalizer applied to ``key + (i + 1) * golden``
where ``i`` is the absolute counter.  The top 53 bits are scaled to [0, 1).
The pure numpy module ``_kernels_py`` implements the same map bit for bit.
"""
import numpy as np
from libc.stdint cimport uint64_t

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double INV53 = 1.0 / 9007199254740992.0

BACKEND_NAME = "cython"


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def uniforms(uint64_t key, uint64_t start, Py_ssize_t n):
    """Return ``n`` uniforms for counters ``start .. start + n - 1``."""
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef uint64_t ctr
    with nogil:
        for i in range(n):
            ctr = start + <uint64_t>i + 1
            o[i] = <double>(_mix(key + ctr * GOLDEN) >> 11) * INV53
    return out


def quantize_pm1(const double[::1] theta, uint64_t key, uint64_t start, double[::1] out):
    """Write +1 where u < (theta + 1) / 2 and -1 elsewhere, in place."""
    cdef Py_ssize_t n = theta.shape[0]
    cdef Py_ssize_t i
    cdef uint64_t ctr
    cdef double u
    if out.shape[0] != n:
        raise ValueError("output buffer has the wrong length")
    with nogil:
        for i in range(n):
            ctr = start + <uint64_t>i + 1
            u = <double>(_mix(key + ctr * GOLDEN) >> 11) * INV53
            if u < (theta[i] + 1.0) * 0.5:
                out[i] = 1.0
            else:
                out[i] = -1.0
