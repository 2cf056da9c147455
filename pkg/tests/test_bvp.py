import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import ORACLE_06
from probekit.bvp import (
    BemSystem, BoundaryTrace, auxiliary_solution, green_omega, green_regular, reflected_solution,
    solve_mixed, star_reflected, third_solution,
)
from probekit.errors import DomainMismatch, NearSurfaceEvaluation
from probekit.geometry import Domain, build_sphere_mesh
from probekit.oracle import oracle_solve
from probekit.potential import G, grad_G

X = np.array([0.6, 0.0, 0.0])


def test_constant_data_gives_constant(small_system):
    one = BoundaryTrace(small_system.outer, np.ones(small_system.n_outer))
    u = solve_mixed(small_system, one)
    pts = np.array([[0.5, 0.2, 0.1], [-0.1, 0.6, -0.3], [0, 0, 0.8]])
    assert_allclose(u.evaluate(pts), 1.0, atol=1e-10)


def test_linear_data_without_obstacle(empty_system):
    V = empty_system.outer.vertices
    u = solve_mixed(empty_system, BoundaryTrace(empty_system.outer, V[:, 0]))
    pts = np.array([[0.5, 0.2, 0.1], [-0.3, 0.1, 0.2], [0, 0, 0]])
    assert_allclose(u.evaluate(pts), pts[:, 0], atol=1e-5)
    flux = u.nodal_trace("outer", "neumann")
    assert np.sqrt(np.mean((flux - V[:, 0]) ** 2)) < 2e-3
    assert_allclose(np.polyfit(V[:, 0], flux, 1), [1.0, 0.0], atol=1e-3)


def test_trace_shape_validated(small_system):
    with pytest.raises(ValueError):
        BoundaryTrace(small_system.outer, np.ones(3))
    with pytest.raises(ValueError):
        BoundaryTrace(small_system.outer, np.full(small_system.n_outer, np.nan))


def test_trace_on_wrong_surface(small_system):
    with pytest.raises(DomainMismatch):
        solve_mixed(small_system, BoundaryTrace(small_system.obstacle, np.zeros(small_system.n_obstacle)))


def test_reflected_boundary_conditions(small_system):
    w = reflected_solution(small_system, X)
    so = small_system.outer.base_samples()
    sd = small_system.obstacle.base_samples()
    assert_allclose(w.nodal_trace("outer", "dirichlet"), 0.0, atol=1e-14)
    assert np.max(np.abs(w.dirichlet_at("outer", so))) < 1e-2 * ORACLE_06["w_xx"]
    total_flux = w.neumann_at("obstacle", sd) + np.einsum("ni,ni->n", grad_G(sd.points - X), sd.normals)
    scale = np.max(np.abs(np.einsum("ni,ni->n", grad_G(sd.points - X), sd.normals)))
    assert np.max(np.abs(total_flux)) < 1e-2 * scale


@pytest.mark.parametrize("factory,field", [
    (reflected_solution, "w"), (auxiliary_solution, "w1"),
    (third_solution, "W"), (star_reflected, "wstar"),
])
@pytest.mark.parametrize("x", [[0.6, 0, 0], [0.2, -0.4, 0.5], [0, 0, 0.335]])
def test_solutions_match_series(canonical, factory, field, x):
    x = np.asarray(x, dtype=float)
    sol = oracle_solve(1.0, 0.3, x, L=None)
    u = factory(canonical.system, x)
    ys = np.array([x, [0.0, 0.5, 0.1], [-0.45, -0.2, 0.3]])
    ref = np.array([sol.value(field, y) for y in ys])
    assert_allclose(u.evaluate(ys), ref, rtol=2e-4, atol=1e-6 * abs(ref[0]))


def test_green_regular_matches_kelvin(canonical):
    R = green_regular(canonical.system, X)
    y = np.array([[0.1, 0.5, -0.2], [0.0, 0.0, 0.0]])
    kelvin = -G(y - X / 0.36) / 0.6
    assert_allclose(R.evaluate(y, check=False), kelvin, rtol=1e-6)
    y = np.array([[0.0, 0.95, 0.0], [-0.5, 0.2, 0.1]])
    exact = G(y - X) - G(y - X / 0.36) / 0.6
    assert_allclose(green_omega(canonical.system, R, y), exact, rtol=1e-5)


def test_superposition(small_system):
    w = reflected_solution(small_system, X)
    w1 = auxiliary_solution(small_system, X)
    W = third_solution(small_system, X)
    y = np.array([[0.0, 0.55, 0.0], [-0.4, 0.1, 0.5]])
    assert_allclose((w + w1).evaluate(y), W.evaluate(y), rtol=1e-9)
    assert_allclose(w.scaled(-2.0).evaluate(y), -2.0 * w.evaluate(y))


def test_adding_across_systems_rejected(small_system, empty_system):
    with pytest.raises(DomainMismatch):
        auxiliary_solution(small_system, X) + auxiliary_solution(empty_system, X)


def test_mixed_green_function_is_symmetric(canonical):
    # G - w1 + w vanishes on the outer surface and has zero flux on the obstacle
    x, y = np.array([0.6, 0, 0]), np.array([-0.1, 0.5, 0.3])
    sysm = canonical.system

    def mixed(src, at):
        return (reflected_solution(sysm, src).evaluate(at) - auxiliary_solution(sysm, src).evaluate(at))[0]

    assert_allclose(mixed(x, y), mixed(y, x), rtol=1e-5)
    assert_allclose(mixed(x, y), -0.07306959950727673, rtol=1e-4)


def test_near_surface_refused(small_system):
    with pytest.raises(NearSurfaceEvaluation):
        reflected_solution(small_system, [0.9999, 0, 0])
    with pytest.raises(NearSurfaceEvaluation):
        reflected_solution(small_system, [0.3001, 0, 0])
    w = reflected_solution(small_system, X)
    with pytest.raises(NearSurfaceEvaluation):
        w.evaluate([[0.0, 0.0, 0.9999]])


def test_no_obstacle_reflected_is_zero(empty_system):
    w = reflected_solution(empty_system, X)
    assert_allclose(w.evaluate([[0.0, 0.4, 0.0]]), 0.0)


def test_coherent_evaluation_agrees(canonical):
    w1 = auxiliary_solution(canonical.system, X)
    pts = X + 0.01 * np.eye(3)
    assert_allclose(w1.evaluate(pts, coherent=True), w1.evaluate(pts), rtol=1e-6)


def test_coarse_mesh_is_within_one_percent():
    coarse = BemSystem(Domain(build_sphere_mesh((0, 0, 0), 1.0, 1), build_sphere_mesh((0, 0, 0), 0.3, 1)))
    ref = oracle_solve(1.0, 0.3, X).value("w1", X)
    assert_allclose(auxiliary_solution(coarse, X).evaluate(X)[0], ref, rtol=1e-2)
