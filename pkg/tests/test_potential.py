import numpy as np
import pytest
from numpy.testing import assert_allclose

from probekit.errors import NearSurface, SingularPoint
from probekit.geometry import build_ellipsoid_mesh, build_sphere_mesh
from probekit.oracle import obstacle_energy_terms
from probekit.potential import (
    G, ImageSet, LineCharge, PointCharge, dirichlet_sphere_image, energy_integral_exterior,
    energy_integral_obstacle, grad_G, hess_G, neumann_sphere_image,
)


def _fd_gradient(f, y, h=1e-5):
    out = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        out[i] = (f(y + e) - f(y - e)) / (2 * h)
    return out


def test_fundamental_solution_values():
    assert_allclose(G(np.array([0.0, 0.0, 2.0])), 1 / (8 * np.pi))
    y = np.array([0.3, -0.4, 0.2])
    assert_allclose(grad_G(y), _fd_gradient(G, y), rtol=1e-8)
    assert_allclose(np.trace(hess_G(y)), 0.0, atol=1e-12)
    H = hess_G(y)
    assert_allclose(H, H.T)
    assert_allclose(H[0], _fd_gradient(lambda p: grad_G(p)[0], y), rtol=1e-6)


@pytest.mark.parametrize("f", [G, grad_G, hess_G])
def test_singular_at_origin(f):
    with pytest.raises(SingularPoint):
        f(np.zeros(3))


def test_line_charge_matches_quadrature():
    start, end = np.array([0.1, 0.0, 0.0]), np.array([0.1, 0.0, 0.5])
    lc = LineCharge(start, end, 0.7)
    s, w = np.polynomial.legendre.leggauss(200)
    s = 0.5 * (s + 1)
    pts = start + s[:, None] * (end - start)
    for y in ([0.4, 0.2, 0.1], [0.1, 0.0, 0.9], [0.1, 0.0, -0.3], [0.1, 0.05, 0.25]):
        y = np.array(y)
        ref = 0.7 * 0.5 * np.sum(0.5 * w * G(y - pts))
        assert_allclose(lc.value(y), ref, rtol=1e-9)
        assert_allclose(lc.gradient(y), _fd_gradient(lc.value, y), rtol=1e-6, atol=1e-10)


def test_image_set_algebra():
    a = ImageSet((PointCharge(np.array([2.0, 0, 0]), 1.0),), 2.0)
    b = ImageSet((PointCharge(np.array([0, 3.0, 0]), -1.0),))
    y = np.array([[0.1, 0.2, 0.3]])
    assert_allclose((a + b).value(y), a.value(y) + b.value(y))
    assert_allclose((-a).gradient(y), -a.gradient(y))
    assert not ImageSet()


def test_neumann_image_cancels_flux_on_sphere():
    c, a, x = np.array([0.1, 0.0, -0.1]), 0.3, np.array([0.5, 0.2, 0.1])
    img = neumann_sphere_image(c, a, x)
    rng = np.random.default_rng(3)
    n = rng.normal(size=(50, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    y = c + a * n
    flux = np.einsum("ni,ni->n", grad_G(y - x) + img.gradient(y), n)
    assert_allclose(flux, 0.0, atol=1e-12)


def test_dirichlet_image_matches_source_on_sphere():
    x = np.array([0.2, -0.3, 0.4])
    img = dirichlet_sphere_image((0, 0, 0), 1.0, x)
    n = np.random.default_rng(4).normal(size=(40, 3))
    y = n / np.linalg.norm(n, axis=1, keepdims=True)
    assert_allclose(img.value(y), G(y - x), rtol=1e-13)


def test_exterior_energy_of_centered_source():
    outer = build_sphere_mesh((0, 0, 0), 1.0, 2)
    val = energy_integral_exterior([0, 0, 0], [0, 0, 0], outer)
    assert_allclose(val, 1 / (4 * np.pi), rtol=1e-10)


def test_obstacle_energy_against_series():
    obs = build_sphere_mesh((0, 0, 0), 0.3, 3)
    x, y = np.array([0.6, 0, 0]), np.array([0.0, 0.45, 0.2])
    ref = float(np.sum(obstacle_energy_terms(1.0, 0.3, x, y, 80)))
    assert_allclose(energy_integral_obstacle(x, y, obs), ref, rtol=1e-6)
    assert_allclose(energy_integral_obstacle(x, x, obs),
                    float(np.sum(obstacle_energy_terms(1.0, 0.3, x, x, 80))), rtol=1e-6)


def test_obstacle_energy_positive_and_symmetric():
    obs = build_ellipsoid_mesh((0, 0, 0), (0.3, 0.2, 0.25), 2)
    x, y = np.array([0.5, 0.1, 0]), np.array([-0.2, 0.5, 0.1])
    assert energy_integral_obstacle(x, x, obs) > 0
    assert_allclose(energy_integral_obstacle(x, y, obs), energy_integral_obstacle(y, x, obs), rtol=1e-6)


def test_energy_refuses_points_near_surface():
    obs = build_sphere_mesh((0, 0, 0), 0.3, 2)
    with pytest.raises(NearSurface):
        energy_integral_obstacle([0.31, 0, 0], [0.6, 0, 0], obs, eps_near=0.02)
