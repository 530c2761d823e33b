"""Hyperrectangles, uniform grids and the geometric predicates shared by all pipelines.

Cell indexing is row-major (last axis fastest), so a 2-d grid with counts
(cx, cy) maps multi-index (i, j) to flat index i*cy + j.  Two intersection
conventions coexist on purpose:

* ``cover_cells`` uses closed boxes on both sides: a rect that merely touches
  a cell face counts that cell.
* ``overlap_ranges`` / ``overlap_cells`` require an overlap of positive
  measure (a zero-width rect falls back to point location).  The transition
  relations of the entropy pipelines are built with this convention; images
  that only graze a cell boundary do not create successors.

Point location via ``locate`` treats cells as half-open boxes
[lb + k*eta, lb + (k+1)*eta), with the upper domain boundary mapped to the
last cell, so cell membership is a genuine partition of the domain.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

# Single absolute slack applied by every geometric predicate (state units).
GEOM_TOL = 1e-12

# Relative tolerance for the grid-parameter divisibility check.
ETA_FIT_RTOL = 1e-9

# Cell ids are plain ints: the row-major flat index into the grid.
CellId = int


class OutOfDomainError(ValueError):
    """A point lies outside the grid domain."""


def _as_vector(x, name="value"):
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class HyperRect:
    """Closed axis-aligned box [lb, ub]; zero-width faces are allowed."""

    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        lb = _as_vector(self.lb, "lb")
        ub = _as_vector(self.ub, "ub")
        if lb.shape != ub.shape:
            raise ValueError(f"lb and ub dimensions differ: {lb.shape} vs {ub.shape}")
        if lb.size < 1:
            raise ValueError("dimension must be >= 1")
        if np.any(lb > ub):
            raise ValueError(f"lb must be <= ub componentwise, got lb={lb}, ub={ub}")
        lb.setflags(write=False)
        ub.setflags(write=False)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def dim(self) -> int:
        return self.lb.size

    @property
    def width(self) -> np.ndarray:
        return self.ub - self.lb

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lb + self.ub)

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (self.ub - self.lb)

    def contains(self, x, tol: float = GEOM_TOL) -> bool:
        x = _as_vector(x, "x")
        return bool(np.all(x >= self.lb - tol) and np.all(x <= self.ub + tol))

    def contains_rect(self, other: "HyperRect", tol: float = GEOM_TOL) -> bool:
        return bool(
            np.all(other.lb >= self.lb - tol) and np.all(other.ub <= self.ub + tol)
        )

    def intersects(self, other: "HyperRect", tol: float = GEOM_TOL) -> bool:
        """Closed-closed intersection test."""
        return bool(
            np.all(self.lb <= other.ub + tol) and np.all(other.lb <= self.ub + tol)
        )

    def vertices(self) -> np.ndarray:
        """All 2^d corner points, shape (2^d, d)."""
        cols = [(self.lb[i], self.ub[i]) for i in range(self.dim)]
        return np.array(list(itertools.product(*cols)), dtype=float)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n uniform points in the box, shape (n, d)."""
        return rng.uniform(self.lb, self.ub, size=(n, self.dim))

    def __repr__(self):
        parts = "x".join(f"[{lo:g},{hi:g}]" for lo, hi in zip(self.lb, self.ub))
        return f"HyperRect({parts})"


@dataclass(frozen=True)
class Polytope:
    """Half-space representation {x : H x <= b}."""

    H: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        b = _as_vector(self.b, "b")
        if H.shape[0] != b.size:
            raise ValueError(f"H has {H.shape[0]} rows but b has {b.size} entries")
        H.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    def contains(self, x, tol: float = GEOM_TOL) -> bool:
        x = _as_vector(x, "x")
        return bool(np.all(self.H @ x <= self.b + tol))


def rect_in_polytope(rect: HyperRect, poly: Polytope, tol: float = GEOM_TOL) -> bool:
    """True iff every vertex of the (convex) rect satisfies H x <= b + tol."""
    if rect.dim != poly.dim:
        raise ValueError(f"dimension mismatch: rect {rect.dim} vs polytope {poly.dim}")
    vals = poly.H @ rect.vertices().T  # (rows, 2^d)
    return bool(np.all(vals <= poly.b[:, None] + tol))


def fitted_eta(domain: HyperRect, eta) -> np.ndarray:
    """Snap a nominal grid parameter to an exact divisor of the domain width.

    Returns width / round(width / eta) per axis, for domains (arctan bounds,
    square roots, ...) whose widths are not exact multiples of the nominal eta.
    """
    eta = _as_vector(eta, "eta")
    if eta.size == 1 and domain.dim > 1:
        eta = np.full(domain.dim, eta[0])
    width = domain.width
    counts = np.maximum(np.round(width / eta), 1.0)
    return width / counts


class UniformGrid:
    """Uniform cell grid over a hyperrectangular domain.

    counts[i] = round(width[i] / eta[i]) must reproduce the domain width
    within relative tolerance 1e-9; anything else is a configuration error
    (use :func:`fitted_eta` to snap irrational widths first).
    """

    def __init__(self, domain: HyperRect, eta):
        eta = _as_vector(eta, "eta")
        if eta.size == 1 and domain.dim > 1:
            eta = np.full(domain.dim, eta[0])
        if eta.size != domain.dim:
            raise ValueError(f"eta has {eta.size} entries for a {domain.dim}-d domain")
        if np.any(eta <= 0):
            raise ValueError(f"eta must be positive, got {eta}")
        width = domain.width
        counts = np.maximum(np.round(width / eta), 1.0)
        bad = np.abs(counts * eta - width) > ETA_FIT_RTOL * np.maximum(width, 1e-300)
        if np.any(bad):
            raise ValueError(
                f"eta {eta} does not divide the domain width {width} "
                f"within relative tolerance {ETA_FIT_RTOL:g}"
            )
        counts = counts.astype(np.int64)
        total = 1.0
        for c in counts:
            total *= float(c)
        if total >= 2.0**64:
            raise ValueError(f"total cell count {total:g} does not fit in 64 bits")
        self.domain = domain
        self.eta = eta
        self.eta.setflags(write=False)
        self.counts = counts
        self.counts.setflags(write=False)
        self.ncells = int(np.prod(counts))
        # Row-major strides: stride[i] = prod(counts[i+1:]).
        strides = np.ones(domain.dim, dtype=np.int64)
        for i in range(domain.dim - 2, -1, -1):
            strides[i] = strides[i + 1] * counts[i + 1]
        self._strides = strides
        self._strides.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def __eq__(self, other):
        return (
            isinstance(other, UniformGrid)
            and np.array_equal(self.domain.lb, other.domain.lb)
            and np.array_equal(self.domain.ub, other.domain.ub)
            and np.array_equal(self.eta, other.eta)
        )

    def __repr__(self):
        return f"UniformGrid({self.domain!r}, eta={self.eta}, counts={self.counts})"

    # -- index conversions -------------------------------------------------

    def multi_index(self, cid: CellId) -> np.ndarray:
        self._check_cid(cid)
        return np.array(np.unravel_index(cid, self.counts), dtype=np.int64)

    def flat_index(self, mi) -> CellId:
        mi = np.asarray(mi, dtype=np.int64)
        return int(np.ravel_multi_index(tuple(mi), tuple(self.counts)))

    def _check_cid(self, cid):
        if not 0 <= cid < self.ncells:
            raise ValueError(f"cell out of range: {cid} (grid has {self.ncells} cells)")

    # -- cell geometry ------------------------------------------------------

    def cell_rect(self, cid: CellId) -> HyperRect:
        """Closed box [lb + k*eta, lb + (k+1)*eta] of a cell."""
        k = self.multi_index(cid)
        lo = self.domain.lb + k * self.eta
        hi = self.domain.lb + (k + 1) * self.eta
        return HyperRect(lo, hi)

    def cell_boxes(self, cids) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized cell boxes: (lo, hi) arrays of shape (n, d)."""
        cids = np.asarray(cids, dtype=np.int64)
        mi = np.stack(np.unravel_index(cids, self.counts), axis=-1)
        lo = self.domain.lb + mi * self.eta
        hi = self.domain.lb + (mi + 1) * self.eta
        return lo, hi

    def cell_centers(self, cids) -> np.ndarray:
        lo, hi = self.cell_boxes(cids)
        return 0.5 * (lo + hi)

    # -- point location -----------------------------------------------------

    def locate(self, x) -> CellId:
        """Cell whose half-open box contains x; raises OutOfDomainError outside."""
        x = _as_vector(x, "x")
        if x.size != self.dim:
            raise ValueError(f"point has dimension {x.size}, grid has {self.dim}")
        if np.any(x < self.domain.lb - GEOM_TOL) or np.any(x > self.domain.ub + GEOM_TOL):
            raise OutOfDomainError(f"point {x} outside domain {self.domain!r}")
        k = np.floor((x - self.domain.lb) / self.eta).astype(np.int64)
        k = np.clip(k, 0, self.counts - 1)
        return self.flat_index(k)

    def locate_many(self, X) -> np.ndarray:
        """Vectorized locate; returns -1 for points outside the domain."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        inside = np.all(X >= self.domain.lb - GEOM_TOL, axis=1) & np.all(
            X <= self.domain.ub + GEOM_TOL, axis=1
        )
        k = np.floor((X - self.domain.lb) / self.eta).astype(np.int64)
        k = np.clip(k, 0, self.counts - 1)
        flat = (k * self._strides).sum(axis=1)
        flat[~inside] = -1
        return flat

    # -- box/cell intersection ----------------------------------------------

    def cover_cells(self, rect: HyperRect) -> tuple[np.ndarray, bool]:
        """Cells whose closed boxes intersect the closed rect (touching counts).

        Returns (sorted cell ids, escapes) where escapes flags a rect that is
        not contained in the grid domain.  Computed by per-axis index-range
        arithmetic, never by enumerating the grid.
        """
        if rect.dim != self.dim:
            raise ValueError(f"rect dimension {rect.dim} != grid dimension {self.dim}")
        escapes = not self.domain.contains_rect(rect)
        lo_f = (rect.lb - self.domain.lb - GEOM_TOL) / self.eta
        hi_f = (rect.ub - self.domain.lb + GEOM_TOL) / self.eta
        k_lo = np.floor(lo_f).astype(np.int64)
        k_hi = np.floor(hi_f).astype(np.int64)
        k_lo = np.maximum(k_lo, 0)
        k_hi = np.minimum(k_hi, self.counts - 1)
        if np.any(k_hi < k_lo):
            return np.empty(0, dtype=np.int64), True
        return self._enumerate_box(k_lo, k_hi), escapes

    def overlap_ranges(
        self, lo: np.ndarray, hi: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Positive-measure overlap index ranges for a batch of closed boxes.

        Parameters are (n, d) arrays of box corners.  Returns
        (k_lo, k_hi, inside, nonempty):

        * k_lo/k_hi: per-axis inclusive index ranges (clamped to the grid) of
          the cells sharing an overlap of positive measure with each box; a
          degenerate (point-like) axis falls back to half-open point location.
        * inside: box is contained in the grid domain (within the slack).
        * nonempty: the clamped range is nonempty on every axis.
        """
        lo = np.atleast_2d(np.asarray(lo, dtype=float))
        hi = np.atleast_2d(np.asarray(hi, dtype=float))
        k_lo = np.floor((lo - self.domain.lb + GEOM_TOL) / self.eta).astype(np.int64)
        k_hi = np.floor((hi - self.domain.lb - GEOM_TOL) / self.eta).astype(np.int64)
        # Point-like axes: keep the locate cell.
        k_hi = np.maximum(k_hi, k_lo)
        inside = np.all(lo >= self.domain.lb - GEOM_TOL, axis=1) & np.all(
            hi <= self.domain.ub + GEOM_TOL, axis=1
        )
        k_lo_c = np.clip(k_lo, 0, self.counts - 1)
        k_hi_c = np.clip(k_hi, 0, self.counts - 1)
        nonempty = np.all(k_hi >= 0, axis=1) & np.all(k_lo <= self.counts - 1, axis=1)
        return k_lo_c, k_hi_c, inside, nonempty

    def overlap_cells(self, rect: HyperRect) -> np.ndarray:
        """Single-rect convenience wrapper around overlap_ranges."""
        k_lo, k_hi, _, nonempty = self.overlap_ranges(
            rect.lb[None, :], rect.ub[None, :]
        )
        if not nonempty[0]:
            return np.empty(0, dtype=np.int64)
        return self._enumerate_box(k_lo[0], k_hi[0])

    def _enumerate_box(self, k_lo, k_hi) -> np.ndarray:
        axes = [np.arange(a, b + 1, dtype=np.int64) for a, b in zip(k_lo, k_hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = np.zeros(mesh[0].shape, dtype=np.int64)
        for m, s in zip(mesh, self._strides):
            flat += m * s
        return np.sort(flat.ravel())

    def vertex_values(self) -> np.ndarray:
        """Lattice lb + k*eta for k in prod([0..counts]), row-major, shape (n, d).

        This is the quantization used for input boxes: it includes both
        endpoints of every axis (eta divides the width exactly by the grid
        invariant), e.g. eta=1 on [-1,1] gives {-1, 0, 1}.
        """
        axes = [
            self.domain.lb[i] + self.eta[i] * np.arange(self.counts[i] + 1)
            for i in range(self.dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)
