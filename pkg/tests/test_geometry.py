import numpy as np
import pytest

from entrobound.geometry import (
    GEOM_TOL,
    HyperRect,
    OutOfDomainError,
    Polytope,
    UniformGrid,
    fitted_eta,
    rect_in_polytope,
)


def grid9():
    # 3x3 grid with cells 2/3 x 4/3
    return UniformGrid(HyperRect([-1.0, -2.0], [1.0, 2.0]), [2 / 3, 4 / 3])


def brute_force_cover(grid, rect):
    """Closed-closed intersection over every cell (oracle)."""
    hits = []
    for cid in range(grid.ncells):
        if grid.cell_rect(cid).intersects(rect):
            hits.append(cid)
    return np.array(hits, dtype=np.int64)


def brute_force_overlap(grid, rect):
    """Positive-measure overlap over every cell (oracle), point fallback."""
    hits = []
    point_like = np.all(rect.ub - rect.lb <= 2 * GEOM_TOL)
    for cid in range(grid.ncells):
        cr = grid.cell_rect(cid)
        if point_like:
            inner = np.all(rect.lb >= cr.lb - GEOM_TOL) and np.all(
                rect.lb < cr.ub - GEOM_TOL
            )
            upper_edge = np.all(
                np.isclose(cr.ub, grid.domain.ub)
                | (rect.lb < cr.ub - GEOM_TOL)
            ) and np.all(rect.lb >= cr.lb - GEOM_TOL) and np.all(
                rect.lb <= cr.ub + GEOM_TOL
            )
            if inner or upper_edge:
                hits.append(cid)
        else:
            width = np.minimum(rect.ub, cr.ub) - np.maximum(rect.lb, cr.lb)
            if np.all(width > GEOM_TOL):
                hits.append(cid)
    return np.array(hits, dtype=np.int64)


class TestHyperRect:
    def test_validation(self):
        with pytest.raises(ValueError):
            HyperRect([0.0, 0.0], [1.0])
        with pytest.raises(ValueError):
            HyperRect([1.0], [0.0])
        # degenerate zero-width face allowed
        r = HyperRect([0.0, 1.0], [0.0, 2.0])
        assert r.width[0] == 0.0

    def test_vertices(self):
        r = HyperRect([0.0, 0.0], [1.0, 2.0])
        v = r.vertices()
        assert v.shape == (4, 2)
        assert {tuple(p) for p in v} == {(0, 0), (0, 2), (1, 0), (1, 2)}

    def test_contains(self):
        r = HyperRect([0.0], [1.0])
        assert r.contains([0.0]) and r.contains([1.0])
        assert not r.contains([1.1])


class TestUniformGrid:
    def test_counts_from_rounding(self):
        g = grid9()
        assert g.ncells == 9
        assert list(g.counts) == [3, 3]

    def test_eta_mismatch_is_error(self):
        with pytest.raises(ValueError, match="does not divide"):
            UniformGrid(HyperRect([0.0], [1.0]), [0.3])

    def test_fitted_eta_snaps(self):
        dom = HyperRect([0.0], [np.arctan(2.0)])
        eta = fitted_eta(dom, 1e-3)
        g = UniformGrid(dom, eta)
        assert abs(g.ncells - np.arctan(2.0) / 1e-3) < 1

    def test_cell_rect_example_corner(self):
        g = grid9()
        r = g.cell_rect(0)
        np.testing.assert_allclose(r.lb, [-1, -2])
        np.testing.assert_allclose(r.ub, [-1 / 3, -2 / 3])

    def test_cell_rect_example_last(self):
        # all 9 cells tile the domain; cell 8 is the upper corner
        g = grid9()
        r = g.cell_rect(8)
        np.testing.assert_allclose(r.lb, [1 / 3, 2 / 3])
        np.testing.assert_allclose(r.ub, [1, 2])

    def test_cell_rect_single_cell_identity(self):
        g = UniformGrid(HyperRect([0.0], [1.0]), [1.0])
        r = g.cell_rect(0)
        assert r.lb[0] == 0.0 and r.ub[0] == 1.0

    def test_cell_rect_out_of_range(self):
        with pytest.raises(ValueError, match="cell out of range"):
            grid9().cell_rect(9)

    def test_locate_corners_and_center(self):
        g = grid9()
        assert g.locate([-1.0, -2.0]) == 0
        assert g.locate([0.0, 0.0]) == 4  # brute-forced over all 9 cell rects
        assert g.locate([1.0, 2.0]) == 8  # upper boundary maps to last cell

    def test_locate_outside(self):
        with pytest.raises(OutOfDomainError):
            grid9().locate([1.5, 0.0])

    def test_tiling_property(self):
        g = grid9()
        rng = np.random.default_rng(0)
        pts = g.domain.sample(10_000, rng)
        ids = g.locate_many(pts)
        assert np.all(ids >= 0)
        lo, hi = g.cell_boxes(ids)
        assert np.all(pts >= lo - GEOM_TOL) and np.all(pts <= hi + GEOM_TOL)

    def test_partition_property(self):
        # off-boundary points are in exactly one half-open cell
        g = grid9()
        rng = np.random.default_rng(1)
        pts = g.domain.sample(500, rng)
        for p in pts:
            k = np.floor((p - g.domain.lb) / g.eta)
            on_boundary = np.any(np.abs(p - (g.domain.lb + k * g.eta)) < 1e-9)
            if on_boundary:
                continue
            members = [
                cid
                for cid in range(g.ncells)
                if np.all(p >= g.cell_rect(cid).lb) and np.all(p < g.cell_rect(cid).ub)
            ]
            assert members == [g.locate(p)]


class TestCoverCells:
    def test_cell_rect_covers_neighbors(self):
        # closed-closed convention: a cell's own rect touches face neighbors
        g = grid9()
        ids, escapes = g.cover_cells(g.cell_rect(4))
        assert not escapes
        assert set(ids) == set(range(9))  # center cell touches all 8 neighbors

    def test_interior_rect_single_cell(self):
        g = grid9()
        ids, escapes = g.cover_cells(HyperRect([-0.9, -1.9], [-0.8, -1.8]))
        assert not escapes
        assert list(ids) == [0]

    def test_derived_example_rect(self):
        # frozen from the brute-force closed-intersection oracle
        g = grid9()
        rect = HyperRect([-1.0, 0.0], [1 / 3, 2 / 3])
        ids, escapes = g.cover_cells(rect)
        oracle = brute_force_cover(g, rect)
        np.testing.assert_array_equal(ids, oracle)
        assert set(ids) == {1, 2, 4, 5, 7, 8}
        assert not escapes

    def test_escape_flag(self):
        g = grid9()
        ids, escapes = g.cover_cells(HyperRect([0.9, 1.9], [1.2, 2.2]))
        assert escapes
        assert 8 in ids
        ids, escapes = g.cover_cells(HyperRect([5.0, 5.0], [6.0, 6.0]))
        assert escapes and ids.size == 0

    def test_random_rects_match_oracle(self):
        rng = np.random.default_rng(42)
        g = UniformGrid(HyperRect([0.0, 0.0], [1.0, 1.0]), [0.25, 0.2])
        for _ in range(200):
            a = rng.uniform(-0.2, 1.0, size=2)
            b = a + rng.uniform(0.0, 0.6, size=2)
            rect = HyperRect(a, b)
            ids, _ = g.cover_cells(rect)
            np.testing.assert_array_equal(ids, brute_force_cover(g, rect))


class TestOverlapCells:
    def test_touching_excluded(self):
        g = grid9()
        # image of the left column under u=1 in the 3x3 benchmark: x touches
        # the third column at 1/3 and must not count it
        rect = HyperRect([-1.0, 0.0], [1 / 3, 2 / 3])
        ids = g.overlap_cells(rect)
        assert set(ids) == {1, 4}  # x-indices {0,1} x y-index {1}

    def test_point_rect_falls_back_to_locate(self):
        g = grid9()
        p = np.array([0.1, 0.1])
        ids = g.overlap_cells(HyperRect(p, p))
        assert list(ids) == [g.locate(p)]
        # point exactly on an interior boundary belongs to the upper cell
        p = np.array([-1 / 3, 0.0])
        ids = g.overlap_cells(HyperRect(p, p))
        assert list(ids) == [g.locate(p)] == [4]

    def test_random_rects_match_oracle(self):
        rng = np.random.default_rng(7)
        g = UniformGrid(HyperRect([0.0, 0.0], [1.0, 1.0]), [0.25, 0.2])
        for _ in range(200):
            a = rng.uniform(0.0, 0.9, size=2)
            b = a + rng.uniform(0.01, 0.5, size=2)
            rect = HyperRect(a, np.minimum(b, 1.0))
            ids = g.overlap_cells(rect)
            np.testing.assert_array_equal(ids, brute_force_overlap(g, rect))

    def test_ranges_inside_flag(self):
        g = grid9()
        lo = np.array([[-1.0, -2.0], [-1.5, 0.0]])
        hi = np.array([[0.0, 0.0], [0.0, 0.5]])
        _, _, inside, nonempty = g.overlap_ranges(lo, hi)
        assert inside.tolist() == [True, False]
        assert nonempty.tolist() == [True, True]


class TestPolytope:
    def poly61(self):
        H = np.array(
            [
                [0.0261, -0.4993],
                [0.9986, 0.0523],
                [-0.0261, 0.4993],
                [-0.9986, -0.0523],
            ]
        )
        return Polytope(H, np.ones(4))

    def test_trivial_inside(self):
        P = Polytope(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([2.0, 2.0]))
        assert rect_in_polytope(HyperRect([0.0, 0.0], [1.0, 1.0]), P)

    def test_trivial_outside(self):
        P = Polytope(np.array([[1.0, 0.0]]), np.array([0.0]))
        assert not rect_in_polytope(HyperRect([-0.5, -0.5], [0.5, 0.5]), P)

    def test_benchmark_cell_inside(self):
        # evaluate the four half-space rows at the 4 vertices
        assert rect_in_polytope(HyperRect([-0.04, -0.08], [0.0, 0.0]), self.poly61())

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            Polytope(np.eye(2), np.ones(3))


class TestVertexValues:
    def test_unit_eta_lattice(self):
        g = UniformGrid(HyperRect([-1.0], [1.0]), [1.0])
        np.testing.assert_allclose(g.vertex_values().ravel(), [-1.0, 0.0, 1.0])

    def test_2d_lattice_row_major(self):
        g = UniformGrid(HyperRect([0.0, 0.0], [1.0, 1.0]), [1.0, 0.5])
        v = g.vertex_values()
        assert v.shape == (6, 2)
        np.testing.assert_allclose(v[0], [0.0, 0.0])
        np.testing.assert_allclose(v[1], [0.0, 0.5])
        np.testing.assert_allclose(v[-1], [1.0, 1.0])
