"""Numpy fallback for the compiled kernels in ``_core``.

Both implementations must agree bit-for-bit; the test suite and the
benchmark script run them side by side.  The containment kernel uses a
padded prefix-sum (integral image) with 2^d-corner inclusion-exclusion so
the per-query cost is independent of the box volume.
"""

from __future__ import annotations

import itertools

import numpy as np

IMPL = "python"


def _strides(counts: np.ndarray) -> np.ndarray:
    d = counts.size
    strides = np.ones(d, dtype=np.int64)
    for i in range(d - 2, -1, -1):
        strides[i] = strides[i + 1] * counts[i + 1]
    return strides


def ranges_contained(lo: np.ndarray, hi: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """For each index box [lo[i], hi[i]] (inclusive), is every cell mask-true?

    lo, hi: (n, d) int64 multi-index corners, already clamped to the grid.
    mask:   d-dimensional boolean array over the full grid.
    Returns a boolean (n,) array.
    """
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    n, d = lo.shape
    if n == 0:
        return np.zeros(0, dtype=bool)
    integral = mask.astype(np.int64)
    for axis in range(d):
        integral = np.cumsum(integral, axis=axis)
    integral = np.pad(integral, [(1, 0)] * d)
    counts = np.zeros(n, dtype=np.int64)
    for signs in itertools.product((0, 1), repeat=d):
        corner = np.empty((n, d), dtype=np.int64)
        for axis, s in enumerate(signs):
            corner[:, axis] = hi[:, axis] + 1 if s else lo[:, axis]
        sign = 1 if (d - sum(signs)) % 2 == 0 else -1
        counts += sign * integral[tuple(corner.T)]
    volume = np.prod(hi - lo + 1, axis=1)
    return counts == volume


def enumerate_ranges(
    lo: np.ndarray, hi: np.ndarray, counts: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Flatten each index box into the row-major cell ids it contains.

    Returns CSR-style (indptr, ids): box i covers ids[indptr[i]:indptr[i+1]],
    sorted ascending within each box.
    """
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    counts = np.asarray(counts, dtype=np.int64)
    n, d = lo.shape
    strides = _strides(counts)
    volumes = np.prod(hi - lo + 1, axis=1)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(volumes, out=indptr[1:])
    out = np.empty(indptr[-1], dtype=np.int64)
    for i in range(n):
        axes = [np.arange(lo[i, a], hi[i, a] + 1) * strides[a] for a in range(d)]
        block = axes[0]
        for a in range(1, d):
            block = block[:, None] + axes[a]
            block = block.ravel()
        out[indptr[i] : indptr[i + 1]] = block
    return indptr, out
