import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from probekit.errors import AmbiguousPoint, InputError, MeshInvariantError, Tangential
from probekit.geometry import (
    Domain, Needle, NeedleContact, Region, TriSurface, box_grid, build_ellipsoid_mesh,
    build_sphere_mesh, classify_point, make_needle, make_scan_grid, needle_hits_obstacle,
    read_mesh, read_needle, straight_needle, validate_closed, write_mesh, write_needle,
)


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_icosphere_vertex_count(level):
    s = build_sphere_mesh((0, 0, 0), 1.0, level)
    assert s.n_vertices == 10 * 4**level + 2
    assert s.n_triangles == 20 * 4**level


def test_curved_patches_recover_exact_sphere():
    s = build_sphere_mesh((0.1, -0.2, 0.3), 0.7, 2)
    assert_allclose(s.areas.sum(), 4 * np.pi * 0.49, rtol=1e-6)
    assert s.flat_area() < 4 * np.pi * 0.49
    assert_allclose(np.linalg.norm(s.quad_points - [0.1, -0.2, 0.3], axis=-1), 0.7, rtol=1e-12)


def test_ellipsoid_area_against_closed_form():
    a, c = 1.0, 0.6
    e = np.sqrt(1 - c * c / (a * a))
    exact = 2 * np.pi * a * a * (1 + (1 - e * e) / e * np.arctanh(e))
    s = build_ellipsoid_mesh((0, 0, 0), (a, a, c), 3)
    assert_allclose(s.areas.sum(), exact, rtol=1e-5)


def test_quadrature_normals_point_outward():
    s = build_sphere_mesh((0, 0, 0), 1.0, 1)
    assert_allclose(np.einsum("tqi,tqi->tq", s.quad_normals, s.quad_points), 1.0, atol=1e-12)


def test_reversed_orientation_rejected():
    s = build_sphere_mesh((0, 0, 0), 1.0, 1)
    with pytest.raises(MeshInvariantError, match="outward"):
        TriSurface(s.vertices, s.triangles[:, ::-1])


def test_open_surface_rejected():
    s = build_sphere_mesh((0, 0, 0), 1.0, 1)
    with pytest.raises(MeshInvariantError):
        validate_closed(s.vertices, s.triangles[1:])


def test_inconsistent_orientation_rejected():
    s = build_sphere_mesh((0, 0, 0), 1.0, 1)
    tri = s.triangles.copy()
    tri[0] = tri[0, ::-1]
    with pytest.raises(MeshInvariantError, match="orientation"):
        validate_closed(s.vertices, tri)


def test_unreferenced_vertex_rejected():
    s = build_sphere_mesh((0, 0, 0), 1.0, 0)
    V = np.vstack([s.vertices, [5.0, 5.0, 5.0]])
    with pytest.raises(MeshInvariantError, match="unreferenced"):
        validate_closed(V, s.triangles)


def test_mesh_roundtrip(tmp_path):
    s = build_sphere_mesh((0, 0, 0), 1.0, 2)
    write_mesh(s, tmp_path / "m.mesh")
    t = read_mesh(tmp_path / "m.mesh", shape=s.shape)
    assert_allclose(t.vertices, s.vertices, rtol=0, atol=0)
    assert np.array_equal(t.triangles, s.triangles)
    assert t.fingerprint() == s.fingerprint()


def test_truncated_mesh_rejected(tmp_path):
    s = build_sphere_mesh((0, 0, 0), 1.0, 1)
    write_mesh(s, tmp_path / "m.mesh")
    lines = (tmp_path / "m.mesh").read_text().splitlines()
    (tmp_path / "cut.mesh").write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(InputError):
        read_mesh(tmp_path / "cut.mesh")
    (tmp_path / "nohdr.mesh").write_text("\n".join(lines[1:]) + "\n")
    with pytest.raises(InputError, match="header"):
        read_mesh(tmp_path / "nohdr.mesh")


def test_obstacle_must_be_inside():
    outer = build_sphere_mesh((0, 0, 0), 1.0, 1)
    with pytest.raises(MeshInvariantError):
        Domain(outer, build_sphere_mesh((0.9, 0, 0), 0.3, 1))


def test_fingerprint_tracks_geometry():
    a = build_sphere_mesh((0, 0, 0), 1.0, 1)
    b = build_sphere_mesh((0, 0, 0), 1.0 + 1e-9, 1)
    assert a.fingerprint() == build_sphere_mesh((0, 0, 0), 1.0, 1).fingerprint()
    assert a.fingerprint() != b.fingerprint()


def test_classify_regions(small_domain):
    assert classify_point(small_domain, [0.6, 0, 0]).region is Region.IN_SHELL
    assert classify_point(small_domain, [0.1, 0, 0]).region is Region.IN_OBSTACLE
    assert classify_point(small_domain, [1.5, 0, 0]).region is Region.EXTERIOR
    c = classify_point(small_domain, [0.6, 0, 0])
    assert_allclose([c.dist_outer, c.dist_obstacle], [0.4, 0.3], rtol=1e-12)


def test_classify_on_surface_is_ambiguous(small_domain):
    with pytest.raises(AmbiguousPoint):
        classify_point(small_domain, [1.0, 0, 0])
    with pytest.raises(AmbiguousPoint):
        classify_point(small_domain, [0, 0.3, 0])


def test_straight_needle_reaches_outer_surface(small_domain):
    n = straight_needle(small_domain, [0.6, 0, 0], [1, 0, 0])
    assert_allclose(n.entry, [1, 0, 0], atol=1e-12)
    assert_allclose(n.tip, [0.6, 0, 0])
    assert_allclose(n.length(), 0.4, atol=1e-12)
    assert needle_hits_obstacle(small_domain, n) is NeedleContact.AVOIDS


def test_needle_through_obstacle_hits(small_domain):
    n = straight_needle(small_domain, [0.6, 0, 0], [-1, 0, 0])
    assert needle_hits_obstacle(small_domain, n) is NeedleContact.HITS


def test_grazing_needle_warns_and_hits(small_domain):
    h = 0.3 + 0.25 * small_domain.obstacle.tolerance
    n = make_needle(small_domain, [[-np.sqrt(1 - h * h), h, 0], [0.5, h, 0]])
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        assert needle_hits_obstacle(small_domain, n) is NeedleContact.HITS
    assert any(issubclass(w.category, Tangential) for w in rec)


def test_make_needle_validation(small_domain):
    with pytest.raises(InputError, match="outer surface"):
        make_needle(small_domain, [[0.9, 0, 0], [0.6, 0, 0]])
    with pytest.raises(InputError, match="strictly inside"):
        make_needle(small_domain, [[1, 0, 0], [1.2, 0, 0]])
    with pytest.raises(InputError, match="two"):
        make_needle(small_domain, [[1, 0, 0]])
    with pytest.raises(InputError, match="itself"):
        make_needle(small_domain, [[1, 0, 0], [0.5, 0, 0], [0.5, 0.2, 0], [0.7, -0.1, 0], [0.7, 0.1, 0]])


def test_needle_roundtrip(tmp_path, small_domain):
    n = make_needle(small_domain, [[0, 1, 0], [0, 0.7, 0], [0.4, 0.5, 0]])
    write_needle(n, tmp_path / "n.txt")
    m = read_needle(tmp_path / "n.txt", small_domain)
    assert np.array_equal(m.points, n.points)
    assert_allclose(n.length(), 0.3 + np.hypot(0.4, 0.2))


def test_scan_grid_drops_outside_and_flags_near(small_domain):
    pts = box_grid([-1, -1, -1], [1, 1, 1], 5)
    grid = make_scan_grid(small_domain, pts, eps_near=0.02)
    r = np.linalg.norm(grid.points, axis=1)
    assert np.all(r < 1.0)
    assert len(grid.points) == np.sum(np.linalg.norm(pts, axis=1) < 1 - 1e-9)
    assert grid.near[np.argmin(np.abs(r - 0.5))] == False  # noqa: E712
    origin = np.flatnonzero(r == 0)[0]
    assert_allclose(grid.dist_obstacle[origin], 0.3, rtol=1e-12)


def test_scan_grid_without_obstacle():
    d = Domain(build_sphere_mesh((0, 0, 0), 1.0, 1))
    grid = make_scan_grid(d, [[0, 0, 0], [0.995, 0, 0]], eps_near=0.02)
    assert np.all(np.isinf(grid.dist_obstacle))
    assert list(grid.near) == [False, True]
