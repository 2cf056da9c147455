import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import ORACLE_06
from probekit.errors import TailTooLarge
from probekit.oracle import (
    choose_order, gap_pairing_sources, obstacle_energy_terms,
    oracle_indicators, oracle_lifted, oracle_solve, tail_bound,
)
from probekit.potential import G

X = np.array([0.6, 0.0, 0.0])
Y = np.array([0.0, 0.6, 0.0])


@pytest.fixture(scope="module")
def sol_x():
    return oracle_solve(1.0, 0.3, X, L=40)


@pytest.fixture(scope="module")
def sol_y():
    return oracle_solve(1.0, 0.3, Y, L=40)


def test_frozen_indicators(sol_x):
    got = oracle_indicators(sol_x, tol=1e-10).as_dict()
    for key, ref in ORACLE_06.items():
        assert_allclose(got[key], ref, rtol=1e-12, err_msg=key)


def test_rotation_invariance(sol_x, sol_y):
    a = oracle_indicators(sol_x).as_dict()
    b = oracle_indicators(sol_y).as_dict()
    for key in a:
        assert_allclose(b[key], a[key], rtol=1e-13, err_msg=key)


def test_internal_identities(sol_x):
    o = oracle_indicators(sol_x)
    assert_allclose(o.W_xx, o.w_xx + o.w1_xx, rtol=1e-14)
    assert_allclose(o.I_star, o.w_star_xx, rtol=1e-13)
    assert o.gap_gg > 0


def test_boundary_conditions_per_degree(sol_x):
    res = sol_x.mode_residuals()
    assert max(res.values()) <= 1e-8


def test_frozen_lifted_values(sol_x, sol_y):
    lifted = oracle_lifted(sol_x, sol_y, tol=1e-10)
    assert_allclose(lifted["I_xy"], -0.0013057117337299268, rtol=1e-12)
    assert_allclose(lifted["I1_xy"], 0.07488177357448042, rtol=1e-12)
    assert_allclose(lifted["w_x_y"], -0.0011992334283308593, rtol=1e-12)
    assert_allclose(lifted["w1_x_y"], 0.07477529526908133, rtol=1e-12)
    for f in ("w", "w1", "W"):
        assert_allclose(lifted[f"{f}_x_y"], lifted[f"{f}_y_x"], rtol=1e-13)


def test_no_obstacle_matches_kelvin_image():
    o = oracle_indicators(oracle_solve(1.0, 0.0, X))
    kelvin = 1.0 / (4 * np.pi * (1 - 0.36))
    assert_allclose(o.w1_xx, kelvin, rtol=1e-14)
    assert_allclose(o.I1, kelvin, rtol=1e-12)
    assert o.I == o.w_xx == o.I_star == o.gap_gg == 0.0


@pytest.mark.parametrize("R1", [1e-2, 1e-3])
def test_small_obstacle_limit(R1):
    o = oracle_indicators(oracle_solve(1.0, R1, X))
    base = oracle_indicators(oracle_solve(1.0, 0.0, X))
    assert o.I < 1e3 * R1**3
    assert_allclose(o.w1_xx, base.w1_xx, rtol=20 * R1**3)
    assert_allclose(o.I1, base.I1, rtol=20 * R1**3)


def test_w1_equals_source_on_outer_sphere(sol_x):
    rng = np.random.default_rng(11)
    n = rng.normal(size=(5, 3))
    for y in n / np.linalg.norm(n, axis=1, keepdims=True):
        big = oracle_solve(1.0, 0.3, X, L=200)
        assert_allclose(big.value("w1", y), G(y - X), rtol=1e-8)
        assert abs(big.value("w", y)) < 1e-12


def test_source_outside_shell_rejected():
    with pytest.raises(ValueError):
        oracle_solve(1.0, 0.3, [0.2, 0, 0])
    with pytest.raises(ValueError):
        oracle_solve(1.0, 0.3, [1.0, 0, 0])


def test_tail_detection():
    with pytest.raises(TailTooLarge):
        oracle_solve(1.0, 0.3, [0.96, 0, 0], L=10).value("w1", np.array([0.96, 0, 0]), tol=1e-8)
    L = choose_order(1.0, 0.3, 0.96)
    near = oracle_solve(1.0, 0.3, [0.96, 0, 0], L=L)
    near.value("w1", np.array([0.96, 0, 0]), tol=1e-8)


def test_tail_bound_is_conservative_for_geometric_terms():
    terms = 0.5 ** np.arange(20)
    assert tail_bound(terms) >= 0.5**20 / 0.5
    assert tail_bound(np.ones(10)) == np.inf
    assert tail_bound(np.r_[1.0, np.zeros(9)]) == 0.0


def test_choose_order_bounds():
    assert choose_order(1.0, 0.3, 0.6) == 40
    assert choose_order(1.0, 0.3, 0.965) > 200
    assert choose_order(1.0, 0.3, 1.0) == 4000


def test_gap_pairing_frozen_and_energy_sandwich():
    pole = np.array([[1.2, 0, 0]])
    gap = gap_pairing_sources(1.0, 0.3, pole, [1.0], pole, [1.0])
    assert_allclose(gap, 0.0005575368543564145, rtol=1e-12)
    energy = float(np.sum(obstacle_energy_terms(1.0, 0.3, pole[0], pole[0], 60)))
    assert 1.0 <= gap / energy <= 2.0
    assert gap_pairing_sources(1.0, 0.0, pole, [1.0], pole, [1.0]) == 0.0


def test_gap_pairing_is_bilinear_and_symmetric():
    pa, pb = np.array([[1.5, 0.2, 0]]), np.array([[0, -1.3, 0.4], [2.0, 0, 0]])
    cb = np.array([0.7, -1.1])
    ab = gap_pairing_sources(1.0, 0.3, pa, [1.0], pb, cb)
    ba = gap_pairing_sources(1.0, 0.3, pb, cb, pa, [1.0])
    parts = sum(c * gap_pairing_sources(1.0, 0.3, pa, [1.0], p[None], [1.0]) for p, c in zip(pb, cb))
    assert_allclose(ab, ba, rtol=1e-12)
    assert_allclose(ab, parts, rtol=1e-12)
    with pytest.raises(ValueError):
        gap_pairing_sources(1.0, 0.3, [[0.5, 0, 0]], [1.0], pa, [1.0])
