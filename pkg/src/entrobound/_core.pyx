# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot inner loops of abstraction building.

Semantics must match ``_core_py`` exactly; tests compare the two.
"""

import numpy as np

cimport cython
from libc.stdint cimport int64_t, uint8_t

IMPL = "cython"


def ranges_contained(lo, hi, mask):
    """For each index box [lo[i], hi[i]] (inclusive), is every cell mask-true?

    Uses a padded prefix-sum of the mask and 2^d-corner inclusion-exclusion,
    so the per-box cost does not depend on the box volume.
    """
    lo_arr = np.ascontiguousarray(lo, dtype=np.int64)
    hi_arr = np.ascontiguousarray(hi, dtype=np.int64)
    cdef Py_ssize_t n = lo_arr.shape[0]
    cdef Py_ssize_t d = lo_arr.shape[1]
    integral = mask.astype(np.int64)
    for axis in range(d):
        integral = np.cumsum(integral, axis=axis)
    integral = np.pad(integral, [(1, 0)] * d)
    pad_counts = np.asarray(integral.shape, dtype=np.int64)
    integral_flat = np.ascontiguousarray(integral.reshape(-1))
    cdef int64_t[:, ::1] lo_v = lo_arr
    cdef int64_t[:, ::1] hi_v = hi_arr
    cdef int64_t[::1] integral_v = integral_flat
    cdef int64_t[::1] pcounts = pad_counts
    out = np.zeros(n, dtype=np.uint8)
    cdef uint8_t[::1] out_v = out
    cdef int64_t[::1] strides = np.ones(d, dtype=np.int64)
    cdef Py_ssize_t i, a, corner
    for a in range(d - 2, -1, -1):
        strides[a] = strides[a + 1] * pcounts[a + 1]
    cdef int64_t ncorners = 1 << d
    cdef int64_t count, volume, flat, sign, bits
    with nogil:
        for i in range(n):
            count = 0
            for corner in range(ncorners):
                flat = 0
                bits = 0
                for a in range(d):
                    if (corner >> a) & 1:
                        flat += (hi_v[i, a] + 1) * strides[a]
                        bits += 1
                    else:
                        flat += lo_v[i, a] * strides[a]
                sign = 1 if (d - bits) % 2 == 0 else -1
                count += sign * integral_v[flat]
            volume = 1
            for a in range(d):
                volume *= hi_v[i, a] - lo_v[i, a] + 1
            out_v[i] = 1 if count == volume else 0
    return out.astype(bool)


def enumerate_ranges(lo, hi, counts):
    """Flatten each index box into the row-major cell ids it contains (CSR)."""
    lo_arr = np.ascontiguousarray(lo, dtype=np.int64)
    hi_arr = np.ascontiguousarray(hi, dtype=np.int64)
    counts_arr = np.ascontiguousarray(counts, dtype=np.int64)
    cdef int64_t[:, ::1] lo_v = lo_arr
    cdef int64_t[:, ::1] hi_v = hi_arr
    cdef int64_t[::1] counts_v = counts_arr
    cdef Py_ssize_t n = lo_arr.shape[0]
    cdef Py_ssize_t d = lo_arr.shape[1]
    cdef int64_t[::1] strides = np.ones(d, dtype=np.int64)
    cdef Py_ssize_t i, a
    for a in range(d - 2, -1, -1):
        strides[a] = strides[a + 1] * counts_v[a + 1]
    indptr = np.zeros(n + 1, dtype=np.int64)
    cdef int64_t[::1] indptr_v = indptr
    cdef int64_t vol
    for i in range(n):
        vol = 1
        for a in range(d):
            vol *= hi_v[i, a] - lo_v[i, a] + 1
        indptr_v[i + 1] = indptr_v[i] + vol
    out = np.empty(indptr[n], dtype=np.int64)
    cdef int64_t[::1] out_v = out
    cdef int64_t[::1] idx = np.zeros(d, dtype=np.int64)
    cdef int64_t flat, pos
    cdef bint done
    with nogil:
        for i in range(n):
            for a in range(d):
                idx[a] = lo_v[i, a]
            pos = indptr_v[i]
            done = False
            while not done:
                flat = 0
                for a in range(d):
                    flat += idx[a] * strides[a]
                out_v[pos] = flat
                pos += 1
                a = d - 1
                while a >= 0:
                    idx[a] += 1
                    if idx[a] <= hi_v[i, a]:
                        break
                    idx[a] = lo_v[i, a]
                    a -= 1
                if a < 0:
                    done = True
    return indptr, out
