"""Finite abstractions over the grid and invariant-controller synthesis.

``build_abstraction`` computes, for every in-Q cell and every input sequence
of length tau, a hyperrectangular enclosure of the tau-step image, snapping
the running enclosure to the overlapped cell union between steps.  Successor
sets are stored as per-axis index ranges, which makes the safety fixed point
(``invariant_controller``) a sequence of box-containment sweeps over a
shrinking cell mask.

Intermediate enclosures (steps 1..tau) are checked against the union of
in-Q cells; the final successor cells are constrained to the controller
domain by the fixed point itself.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dynamics import SystemDef, SystemSetup, reach_boxes, step_points
from .geometry import HyperRect, Polytope, UniformGrid, rect_in_polytope

MAX_SEQUENCES = 10**6
MAX_ALTERNATIONS = 100


@dataclass
class Abstraction:
    """Grid abstraction: per (cell, input sequence) successor index ranges."""

    system: SystemDef
    state_grid: UniformGrid
    input_grid: UniformGrid
    tau: int
    q_mask: np.ndarray  # bool (ncells,)
    cells: np.ndarray  # global ids of in-Q cells, sorted
    inputs: np.ndarray  # (ninp, m) input value lattice
    seqs: np.ndarray  # (nseq, tau) input ids
    succ_lo: np.ndarray  # (ndom, nseq, d) clamped index ranges of the final enclosure
    succ_hi: np.ndarray
    ok: np.ndarray  # (ndom, nseq) in-domain at every step, intermediates within Q-bar

    def __post_init__(self):
        local = np.full(self.state_grid.ncells, -1, dtype=np.int64)
        local[self.cells] = np.arange(len(self.cells))
        self._local = local

    @property
    def ndom(self) -> int:
        return len(self.cells)

    @property
    def nseq(self) -> int:
        return len(self.seqs)

    def local_index(self, cell_ids) -> np.ndarray:
        return self._local[np.asarray(cell_ids, dtype=np.int64)]

    def seq_vectors(self, seq_id: int) -> np.ndarray:
        """The (tau, m) array of input vectors of one sequence."""
        return self.inputs[self.seqs[seq_id]]

    def post(self, cell_id: int, seq_id: int) -> tuple[np.ndarray, bool]:
        """Successor cells of the final enclosure and the stays-in-Q flag."""
        i = int(self._local[cell_id])
        if i < 0:
            raise ValueError(f"cell {cell_id} is not an in-Q cell")
        lo = self.succ_lo[i, seq_id][None]
        hi = self.succ_hi[i, seq_id][None]
        if not self.ok[i, seq_id]:
            _, ids = kernels.enumerate_ranges(lo, hi, self.state_grid.counts)
            return ids, False
        stays = bool(
            kernels.ranges_contained(lo, hi, self.q_mask.reshape(self.state_grid.counts))[0]
        )
        _, ids = kernels.enumerate_ranges(lo, hi, self.state_grid.counts)
        return ids, stays


@dataclass
class MultiController:
    """Maximal invariant controller: admissible input sequences per cell."""

    abstraction: Abstraction
    cells: np.ndarray  # global ids, sorted
    admissible: np.ndarray  # bool (n, nseq)

    @property
    def is_empty(self) -> bool:
        return len(self.cells) == 0

    def admissible_seqs(self, cell_id: int) -> np.ndarray:
        i = np.searchsorted(self.cells, cell_id)
        if i >= len(self.cells) or self.cells[i] != cell_id:
            raise KeyError(f"cell {cell_id} not in controller domain")
        return np.flatnonzero(self.admissible[i])

    def domain_mask(self) -> np.ndarray:
        mask = np.zeros(self.abstraction.state_grid.ncells, dtype=bool)
        mask[self.cells] = True
        return mask

    def verify(self) -> None:
        """Exhaustive fixed-point soundness check (used by the test suite)."""
        abs_ = self.abstraction
        dom_nd = self.domain_mask().reshape(abs_.state_grid.counts)
        loc = abs_.local_index(self.cells)
        lo = abs_.succ_lo[loc].reshape(-1, abs_.state_grid.dim)
        hi = abs_.succ_hi[loc].reshape(-1, abs_.state_grid.dim)
        contained = kernels.ranges_contained(lo, hi, dom_nd).reshape(self.admissible.shape)
        ok = abs_.ok[loc]
        bad = self.admissible & ~(ok & contained)
        if np.any(bad):
            raise AssertionError(
                f"fixed point unsound: {int(bad.sum())} admissible rows violate containment"
            )
        if not np.all(self.admissible.any(axis=1)):
            raise AssertionError("controller domain contains a cell without admissible input")


def _in_q_mask(grid: UniformGrid, Q) -> np.ndarray:
    """Cells contained in Q (box containment, or all-vertices for a polytope)."""
    lo, hi = grid.cell_boxes(np.arange(grid.ncells))
    if isinstance(Q, HyperRect):
        tol = 1e-12
        return np.all(lo >= Q.lb - tol, axis=1) & np.all(hi <= Q.ub + tol, axis=1)
    if isinstance(Q, Polytope):
        ok = np.ones(grid.ncells, dtype=bool)
        d = grid.dim
        for picks in itertools.product((0, 1), repeat=d):
            corner = np.where(np.array(picks, dtype=bool), hi, lo)
            ok &= np.all(corner @ Q.H.T <= Q.b + 1e-12, axis=1)
        return ok
    raise TypeError(f"Q must be a HyperRect or Polytope, got {type(Q)!r}")


def input_sequences(ninp: int, tau: int) -> np.ndarray:
    """All tau-fold products of input ids, lexicographic (first step major)."""
    total = ninp**tau
    if total > MAX_SEQUENCES:
        raise ValueError(
            f"{ninp}^{tau} = {total} input sequences exceeds the guard of {MAX_SEQUENCES}"
        )
    return np.array(list(itertools.product(range(ninp), repeat=tau)), dtype=np.int64)


def build_abstraction(
    system: SystemDef,
    U: HyperRect,
    Q,
    Q_X: HyperRect,
    eta_s,
    eta_i,
    tau: int = 1,
    threads: int = 1,
) -> Abstraction:
    """Abstraction of the system over the grid, tau-step images per sequence."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if tau > 1 and system.is_uncertain:
        raise ValueError("set-valued systems require tau = 1")
    state_grid = UniformGrid(Q_X, eta_s)
    input_grid = UniformGrid(U, eta_i)
    q_mask = _in_q_mask(state_grid, Q)
    if not np.any(q_mask):
        raise ValueError("no grid cell is contained in Q (empty abstraction)")
    cells = np.flatnonzero(q_mask)
    inputs = input_grid.vertex_values()
    seqs = input_sequences(len(inputs), tau)
    q_nd = q_mask.reshape(state_grid.counts)

    ndom, nseq, d = len(cells), len(seqs), state_grid.dim
    cell_lo, cell_hi = state_grid.cell_boxes(cells)
    succ_lo = np.empty((ndom, nseq, d), dtype=np.int64)
    succ_hi = np.empty((ndom, nseq, d), dtype=np.int64)
    ok = np.empty((ndom, nseq), dtype=bool)

    def run_seq(s):
        lo, hi = cell_lo, cell_hi
        alive = np.ones(ndom, dtype=bool)
        k_lo = k_hi = None
        for t in range(tau):
            u = inputs[seqs[s, t]]
            with np.errstate(over="ignore", invalid="ignore"):
                elo, ehi = reach_boxes(system, lo, hi, u)
            finite = np.all(np.isfinite(elo), axis=1) & np.all(np.isfinite(ehi), axis=1)
            elo = np.where(finite[:, None], elo, cell_lo)
            ehi = np.where(finite[:, None], ehi, cell_hi)
            k_lo, k_hi, inside, nonempty = state_grid.overlap_ranges(elo, ehi)
            alive = alive & finite & inside & nonempty
            if t < tau - 1:
                # intermediate enclosures must stay within the in-Q cells
                alive = alive & kernels.ranges_contained(k_lo, k_hi, q_nd)
                lo = state_grid.domain.lb + k_lo * state_grid.eta
                hi = state_grid.domain.lb + (k_hi + 1) * state_grid.eta
                lo = np.where(alive[:, None], lo, cell_lo)
                hi = np.where(alive[:, None], hi, cell_hi)
        succ_lo[:, s, :] = k_lo
        succ_hi[:, s, :] = k_hi
        ok[:, s] = alive

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_seq, range(nseq)))
    else:
        for s in range(nseq):
            run_seq(s)

    return Abstraction(
        system=system,
        state_grid=state_grid,
        input_grid=input_grid,
        tau=tau,
        q_mask=q_mask,
        cells=cells,
        inputs=inputs,
        seqs=seqs,
        succ_lo=succ_lo,
        succ_hi=succ_hi,
        ok=ok,
    )


def build_abstraction_from_setup(
    setup: SystemSetup, tau: int | None = None, threads: int = 1, reverse: bool = False
) -> Abstraction:
    system = setup.reverse if reverse else setup.system
    if reverse and system is None:
        raise ValueError(f"system {setup.name!r} has no reversed dynamics")
    return build_abstraction(
        system,
        setup.U,
        setup.Q,
        setup.Q_X,
        setup.eta_s,
        setup.eta_i,
        tau=setup.tau if tau is None else tau,
        threads=threads,
    )


def _fixed_point(abstraction: Abstraction, start_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Greatest fixed point of the safety operator within start_mask.

    Returns (alive: bool over abstraction.cells, admissible: bool (ndom, nseq)).
    The sweep sets are nonincreasing; the iteration count is bounded by the
    number of in-Q cells.
    """
    grid = abstraction.state_grid
    lo = abstraction.succ_lo.reshape(-1, grid.dim)
    hi = abstraction.succ_hi.reshape(-1, grid.dim)
    ok = abstraction.ok
    alive = start_mask[abstraction.cells].copy()
    admissible = np.zeros_like(ok)
    mask_flat = np.zeros(grid.ncells, dtype=bool)
    for sweep in range(abstraction.ndom + 2):
        mask_flat[:] = False
        mask_flat[abstraction.cells[alive]] = True
        contained = kernels.ranges_contained(lo, hi, mask_flat.reshape(grid.counts))
        admissible = ok & contained.reshape(ok.shape) & alive[:, None]
        new_alive = admissible.any(axis=1)
        if np.array_equal(new_alive, alive):
            return alive, admissible
        assert np.all(alive | ~new_alive), "fixed-point sweeps must be nonincreasing"
        alive = new_alive
        if not np.any(alive):
            return alive, np.zeros_like(ok)
    raise AssertionError("fixed point failed to converge within the cell-count bound")


def invariant_controller(abstraction: Abstraction) -> MultiController:
    """Maximal invariant controller over the in-Q cells (may be empty)."""
    alive, admissible = _fixed_point(
        abstraction, _cells_to_mask(abstraction.state_grid.ncells, abstraction.cells)
    )
    return MultiController(
        abstraction=abstraction,
        cells=abstraction.cells[alive],
        admissible=admissible[alive],
    )


def _cells_to_mask(ncells: int, cells: np.ndarray) -> np.ndarray:
    mask = np.zeros(ncells, dtype=bool)
    mask[cells] = True
    return mask


def forward_backward_domain(
    setup: SystemSetup, eta_s=None, eta_i=None, threads: int = 1
) -> np.ndarray:
    """Alternate forward/backward invariant domains until they stabilize.

    Uses the setup's reversed system; returns the global ids of the stable
    domain (possibly empty).  Raises after 100 alternations without
    stabilization, reporting the last two domain sizes.
    """
    if setup.reverse is None:
        raise ValueError(f"system {setup.name!r} has no reversed dynamics")
    work = setup
    if eta_s is not None or eta_i is not None:
        from dataclasses import replace

        work = replace(
            setup,
            eta_s=np.asarray(eta_s if eta_s is not None else setup.eta_s, dtype=float),
            eta_i=np.asarray(eta_i if eta_i is not None else setup.eta_i, dtype=float),
        )
    abs_f = build_abstraction_from_setup(work, tau=1, threads=threads)
    abs_b = build_abstraction_from_setup(work, tau=1, threads=threads, reverse=True)
    ncells = abs_f.state_grid.ncells
    mask = _cells_to_mask(ncells, abs_f.cells)
    sizes = [int(mask.sum())]
    for k in range(MAX_ALTERNATIONS):
        abstraction = abs_f if k % 2 == 0 else abs_b
        alive, _ = _fixed_point(abstraction, mask)
        new_mask = _cells_to_mask(ncells, abstraction.cells[alive])
        sizes.append(int(new_mask.sum()))
        if np.array_equal(new_mask, mask):
            return np.flatnonzero(mask)
        mask = new_mask
        if not np.any(mask):
            return np.flatnonzero(mask)
    raise RuntimeError(
        f"forward/backward iteration did not stabilize after {MAX_ALTERNATIONS} "
        f"alternations; last two domain sizes: {sizes[-2]}, {sizes[-1]}"
    )


def restrict_controller(ctrl: MultiController, cells: np.ndarray) -> MultiController:
    """Invariant controller recomputed within a smaller cell set."""
    mask = _cells_to_mask(ctrl.abstraction.state_grid.ncells, np.asarray(cells))
    alive, admissible = _fixed_point(ctrl.abstraction, mask)
    return MultiController(
        abstraction=ctrl.abstraction,
        cells=ctrl.abstraction.cells[alive],
        admissible=admissible[alive],
    )


def simulate(
    abstraction: Abstraction,
    cells: np.ndarray,
    seq_of_cell,
    X0: np.ndarray,
    periods: int,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Drive concrete trajectories with a per-cell sequence choice.

    seq_of_cell maps a local index into ``cells`` to a sequence id (array).
    Returns the final states; raises if any trajectory leaves the union of
    in-Q cells at any intermediate step or lands outside the domain cells at
    a period boundary.
    """
    grid = abstraction.state_grid
    X = np.atleast_2d(np.asarray(X0, dtype=float)).copy()
    local = np.full(grid.ncells, -1, dtype=np.int64)
    local[cells] = np.arange(len(cells))
    seq_of_cell = np.asarray(seq_of_cell, dtype=np.int64)
    for _ in range(periods):
        ids = grid.locate_many(X)
        if np.any(ids < 0) or np.any(local[ids] < 0):
            raise AssertionError("trajectory left the controller domain")
        seq_ids = seq_of_cell[local[ids]]
        for t in range(abstraction.tau):
            u_ids = abstraction.seqs[seq_ids, t]
            for uid in np.unique(u_ids):
                sel = u_ids == uid
                X[sel] = step_points(
                    abstraction.system, X[sel], abstraction.inputs[uid], rng=rng
                )
            inq = grid.locate_many(X)
            if np.any(inq < 0) or not np.all(abstraction.q_mask[inq]):
                raise AssertionError("trajectory left the in-Q cells mid-period")
    return X
