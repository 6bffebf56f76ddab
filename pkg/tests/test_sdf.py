import numpy as np
import pytest

from graspd import diffcore as dc
from graspd.mesh import box_mesh, icosphere
from graspd.sdf import (BakeError, GridFormatError, PrimitiveError, analytic_primitive, bake,
                        grid_from_function, load_grid, save_grid)
from graspd.mesh import TriMesh

from conftest import sphere_fn


@pytest.fixture(scope="module")
def unit_sphere():
    return grid_from_function(lambda q: np.linalg.norm(q, axis=-1) - 1.0, [-2.5] * 3, [2.5] * 3, 64)


@pytest.fixture(scope="module")
def baked_icosphere():
    return bake(icosphere(0.03, 4), 64, 0.01)


def test_query_unit_sphere(unit_sphere):
    h = unit_sphere.spacing.max()
    assert abs(unit_sphere.query([2.0, 0.0, 0.0]) - 1.0) <= 2 * h


def test_query_at_node_is_exact(unit_sphere):
    nodes = unit_sphere.node_positions()
    for idx in [(0, 0, 0), (10, 20, 30), (63, 5, 17), (31, 31, 31)]:
        assert unit_sphere.query(nodes[idx]) == unit_sphere.values[idx]


def test_query_clamped_exterior(unit_sphere):
    idx = (63, 20, 40)
    node = unit_sphere.node_positions()[idx]
    d = unit_sphere.values[idx]
    assert unit_sphere.query(node + [0.05, 0, 0]) == pytest.approx(d + 0.05, abs=1e-12)


def test_grad_unit_sphere(unit_sphere):
    g = unit_sphere.grad([0.5, 0.0, 0.0])
    assert np.linalg.norm(g - [1, 0, 0]) < 0.05
    assert abs(np.linalg.norm(g) - 1) < 0.05


def test_grad_far_outside(unit_sphere):
    np.testing.assert_allclose(unit_sphere.grad([0.0, 0.0, 40.0]), [0, 0, 1], atol=1e-12)


def test_grad_matches_finite_differences(unit_sphere):
    rng = np.random.default_rng(1)
    h = unit_sphere.spacing
    worst = 0.0
    for _ in range(50):
        cell = rng.integers(5, 58, 3)
        # stay 1e-3 cells away from faces so central differences stay in one cell
        x = unit_sphere.lo + (cell + rng.uniform(0.01, 0.99, 3)) * h
        g = unit_sphere.grad(x)
        fd = np.array([(unit_sphere.query(x + e * 1e-6) - unit_sphere.query(x - e * 1e-6)) / 2e-6
                       for e in np.eye(3)])
        worst = max(worst, np.max(np.abs(g - fd) / np.maximum(1, np.abs(fd))))
    assert worst < 1e-4


def test_tape_query_gradient(unit_sphere):
    def f(t, x):
        phi, g = unit_sphere.evaluate_var(x)
        return dc.vsum(phi * phi) + dc.vsum(g[:, 0])

    x = np.array([[0.43, -0.31, 0.27], [1.33, 0.61, -0.2]])
    assert dc.finite_difference_check(f, x, 1e-6) < 1e-4


def test_effective_distance_sphere_oracle():
    grid = grid_from_function(sphere_fn(0.03), [-0.05] * 3, [0.05] * 3, 64)
    x = np.array([0.04, 0.0, 0.0])
    assert abs(grid.effective_distance(x, 0.01)) <= 2 * grid.spacing.max()


def test_effective_distance_shift_identity(unit_sphere):
    rng = np.random.default_rng(2)
    pts = rng.uniform(-4, 4, (200, 3))
    np.testing.assert_array_equal(unit_sphere.effective_distance(pts, 0.0), unit_sphere.query(pts))
    base = unit_sphere.effective_distance(pts, 0.0)
    for r in (0.01, 0.02, 0.37):
        shifted = unit_sphere.effective_distance(pts, r)
        # the shift is a single subtraction: bitwise equal to base - r
        np.testing.assert_array_equal(shifted, base - r)
        # and differs from -r only by the rounding of that subtraction
        assert np.all(np.abs((shifted - base) + r) <= 2 * np.spacing(np.abs(base) + r))


def test_effective_distance_at_surface():
    s = analytic_primitive("sphere", 0.03)
    grid = grid_from_function(s.query, [-0.05] * 3, [0.05] * 3, 64)
    # a node lying on the surface
    node = grid.lo + np.array([32, 32, 32]) * grid.spacing
    x = node / np.linalg.norm(node) * 0.03 if np.linalg.norm(node) > 0 else np.array([0.03, 0, 0])
    assert grid.effective_distance(x, 0.02) - grid.query(x) == -0.02


def test_effective_distance_negative_offset(unit_sphere):
    with pytest.raises(ValueError):
        unit_sphere.effective_distance([0, 0, 0], -0.1)


def test_boundary_continuity(unit_sphere):
    rng = np.random.default_rng(4)
    lo, hi = unit_sphere.lo, unit_sphere.hi
    for _ in range(100):
        p = rng.uniform(lo, hi)
        axis = rng.integers(3)
        p[axis] = hi[axis] if rng.random() < 0.5 else lo[axis]
        out = p.copy()
        out[axis] += 1e-10 * (1 if p[axis] == hi[axis] else -1)
        inside = p.copy()
        inside[axis] -= 1e-10 * (1 if p[axis] == hi[axis] else -1)
        a, b, c = unit_sphere.query(inside), unit_sphere.query(p), unit_sphere.query(out)
        assert abs(a - b) < 1e-9 and abs(c - b) < 1e-9


def test_bake_icosphere(baked_icosphere):
    grid = baked_icosphere
    h = grid.spacing.max()
    assert abs(grid.query([0.0, 0.0, 0.0]) + 0.03) <= 2 * h
    exact = np.linalg.norm(grid.node_positions(), axis=-1) - 0.03
    assert np.max(np.abs(grid.values - exact)) <= 2 * h


def test_bake_bounds(baked_icosphere):
    mesh = icosphere(0.03, 4)
    vmin, vmax = mesh.bounds
    np.testing.assert_allclose(baked_icosphere.lo, vmin - 0.01)
    np.testing.assert_allclose(baked_icosphere.hi, vmax + 0.01)


def test_bake_unit_cube():
    grid = bake(box_mesh((0.5, 0.5, 0.5)), 33, 0.1)
    assert abs(grid.query([0, 0, 0]) + 0.5) <= 2 * grid.spacing.max()


def test_bake_boundary_positive(baked_icosphere):
    v = baked_icosphere.values
    faces = [v[0], v[-1], v[:, 0], v[:, -1], v[:, :, 0], v[:, :, -1]]
    assert all(np.all(f > 0) for f in faces)


def test_bake_numba_matches_numpy():
    mesh = icosphere(0.03, 2)
    a = bake(mesh, 12, 0.01, use_numba=True)
    b = bake(mesh, 12, 0.01, use_numba=False)
    np.testing.assert_allclose(a.values, b.values, atol=1e-12)


def test_bake_open_mesh_reports_nodes():
    mesh = icosphere(0.03, 2)
    # dropping faces leaves a hole so ray parities disagree
    holed = TriMesh(mesh.vertices, mesh.faces[20:])
    with pytest.raises(BakeError) as exc:
        bake(holed, 24, 0.01)
    assert len(exc.value.nodes) > 0


def test_primitives():
    assert analytic_primitive("sphere", 0.03).query([0, 0, 0]) == pytest.approx(-0.03)
    assert analytic_primitive("box", 1, 1, 1).query([2, 2, 0]) == pytest.approx(np.sqrt(2))
    cap = analytic_primitive("capsule", 0.01, 0.05)
    assert cap.query([0, 0, 0.05 + 0.01]) == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(cap.grad([0, 0, 0.2]), [0, 0, 1])


@pytest.mark.parametrize("kind, params", [("sphere", (0.0,)), ("box", (1, -1, 1)), ("capsule", (0.01, 0.0))])
def test_primitive_parameter_errors(kind, params):
    with pytest.raises(PrimitiveError):
        analytic_primitive(kind, *params)


def test_gsdf_round_trip(tmp_path, baked_icosphere):
    path = tmp_path / "g.gsdf"
    save_grid(baked_icosphere, path)
    g = load_grid(path)
    np.testing.assert_array_equal(g.values, baked_icosphere.values)
    np.testing.assert_array_equal(g.lo, baked_icosphere.lo)
    np.testing.assert_array_equal(g.hi, baked_icosphere.hi)
    raw = path.read_bytes()
    assert raw[:4] == b"GSDF"
    # x-fastest: the second stored value is node (1, 0, 0)
    assert np.frombuffer(raw[68 + 8:68 + 16], "<f8")[0] == baked_icosphere.values[1, 0, 0]


def test_gsdf_rejects_garbage(tmp_path):
    p = tmp_path / "bad.gsdf"
    p.write_bytes(b"nope" + bytes(100))
    with pytest.raises(GridFormatError):
        load_grid(p)


def test_trilinear_numba_matches_numpy(unit_sphere):
    from graspd.sdf._kernels import trilinear
    rng = np.random.default_rng(5)
    pts = np.concatenate([rng.uniform(-3, 3, (500, 3)), unit_sphere.node_positions()[::9, ::9, ::9].reshape(-1, 3)])
    a = trilinear(unit_sphere.values, unit_sphere.lo, unit_sphere.spacing, pts, True, use_numba=True)
    b = trilinear(unit_sphere.values, unit_sphere.lo, unit_sphere.spacing, pts, True, use_numba=False)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)
