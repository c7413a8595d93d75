import numpy as np
import pytest

import subelliptic as se
from subelliptic.grids import BoundaryStencilError, interpolate


def test_box_validation():
    with pytest.raises(ValueError):
        se.Box((0.0, 0.0), (1.0,))
    with pytest.raises(ValueError):
        se.Box((0.0, 1.0), (1.0, 0.5))
    box = se.Box((-1, 0), (1, 2))
    assert box.contains(np.array([0.0, 1.0]))
    assert not box.contains(np.array([2.0, 1.0]))


def test_grid_basic_geometry():
    grid = se.Grid(se.Box((0.0, 0.0), (1.0, 2.0)), (5, 9))
    assert np.allclose(grid.spacing, [0.25, 0.25])
    nodes = grid.nodes()
    assert nodes.shape == (5, 9, 2)
    assert np.allclose(nodes[0, 0], [0.0, 0.0])
    assert np.allclose(nodes[-1, -1], [1.0, 2.0])
    rim = grid.rim_mask()
    assert rim.sum() == 5 * 9 - 3 * 7


def test_node_index_and_snap():
    grid = se.Grid(se.Box((0.0,), (1.0,)), (11,))
    assert grid.node_index(np.array([0.3])) == (3,)
    with pytest.raises(BoundaryStencilError):
        grid.node_index(np.array([0.33]))
    snapped = grid.snap_index(np.array([[0.33], [2.0], [-1.0]]))
    assert snapped.ravel().tolist() == [3, 10, 0]


def test_interpolation_reproduces_multilinear():
    grid = se.Grid(se.Box((0.0, 0.0), (1.0, 1.0)), (6, 6))
    vals = grid.nodes()[..., 0] * 2 + grid.nodes()[..., 1]
    pts = np.random.default_rng(0).uniform(0, 1, size=(40, 2))
    out = interpolate(grid, vals, pts)
    assert np.allclose(out, pts @ [2.0, 1.0], atol=1e-12)


def test_gridfunction_shape_checks():
    grid = se.Grid(se.Box((0.0,), (1.0,)), (5,))
    with pytest.raises(ValueError):
        se.GridFunction(grid, np.zeros(4))
    gf = se.GridFunction(grid, np.zeros(5))
    assert gf.interior_mask.tolist() == [False, True, True, True, False]


def test_field_file_round_trip(tmp_path):
    grid = se.Grid(se.Box((-1.0, 0.0), (1.0, 2.0)), (7, 5))
    rng = np.random.default_rng(3)
    gf = se.GridFunction(grid, rng.normal(size=grid.shape))
    p = tmp_path / "f.field"
    se.write_field(gf, p)
    back = se.read_field(p)
    assert np.array_equal(back.values, gf.values)
    assert np.array_equal(back.interior_mask, gf.interior_mask)
    assert back.grid == gf.grid
    se.write_field(back, tmp_path / "g.field")
    assert p.read_bytes() == (tmp_path / "g.field").read_bytes()


def test_field_file_rejects_garbage(tmp_path):
    p = tmp_path / "junk.field"
    p.write_bytes(b"not a field file")
    with pytest.raises(ValueError):
        se.read_field(p)


def test_polynomial_tables():
    poly = se.Polynomial.from_table([[2.0, [1, 0]], [1.0, [0, 2]]], 2)
    assert poly(np.array([3.0, 2.0])) == pytest.approx(10.0)
    fn = se.PolynomialFunction(poly)
    assert np.allclose(fn.gradient(np.array([3.0, 2.0])), [2.0, 4.0])
    assert np.allclose(fn.hessian(np.array([3.0, 2.0])), [[0, 0], [0, 2.0]])
    with pytest.raises(ValueError):
        se.Polynomial.from_table([[1.0, [1]]], 2)
