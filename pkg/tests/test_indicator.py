import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import ORACLE_06
from probekit.bvp import BemSystem
from probekit.errors import NearSurface, NestingViolation
from probekit.geometry import Domain, build_sphere_mesh, straight_needle
from probekit.indicator import (
    CSV_COLUMNS, appendix_residuals, check_probe, axis_needles, harmonicity_ratios, invariance_check,
    mid_shell_point, radial_needles, read_csv, records_csv, scan, sideB_classify, third_indicator,
    vtk_structured_points, write_csv,
)
from probekit.runge import Verdict, build_needle_sequence

X = np.array([0.6, 0.0, 0.0])
Y = np.array([0.0, 0.6, 0.0])


@pytest.fixture(scope="module")
def small_record(small_system, small_pair):
    return third_indicator(small_system, *small_pair, X)


def test_direct_values_match_series(canonical):
    rec = canonical.record(X)
    pairs = {"I_direct": "I", "I1_direct": "I1", "W_xx": "W_xx", "I_star": "I_star",
             "w_xx_direct": "w_xx", "w1_xx": "w1_xx", "w_star_xx": "w_star_xx"}
    for attr, key in pairs.items():
        assert_allclose(getattr(rec, attr), ORACLE_06[key], rtol=2e-5, err_msg=attr)


def test_record_identities(small_record):
    res = small_record.residuals
    assert res["natural"] < 1e-12
    for key in ("two_way", "cross_difference", "outer_flux", "star", "energy"):
        assert res[key] < 1e-4, key
    assert small_record.verdict == "Direct"
    assert np.isnan(small_record.I_from_data)
    small_record.check_invariants()


def test_gap_from_data_matches_series(small_record):
    assert_allclose(small_record.gap_gg, ORACLE_06["gap_gg"], rtol=5e-3)
    assert_allclose(small_record.I1, ORACLE_06["I1"], rtol=1e-3)


def test_data_route_on_canonical_mesh(canonical):
    sysm = canonical.system
    seq = build_needle_sequence(sysm.domain, straight_needle(sysm.domain, X, [1, 0, 0]))
    rec = third_indicator(sysm, canonical.L0, canonical.LD, X, seq=seq)
    assert rec.verdict == "Converged"
    assert len(rec.s_n) >= 3
    assert_allclose(rec.I_from_data, ORACLE_06["I"], rtol=0.05)
    assert_allclose(rec.w_xx_from_data, ORACLE_06["w_xx"], rtol=0.05)


def test_no_obstacle_indicators(empty_system, empty_pair):
    rec = third_indicator(empty_system, *empty_pair, X)
    kelvin = 1 / (4 * np.pi * (1 - 0.36))
    assert rec.I_direct == rec.w_xx_direct == rec.I_star == 0.0
    assert rec.gap_gg == 0.0
    assert_allclose(rec.w1_xx, kelvin, rtol=1e-4)
    assert_allclose(rec.W_xx, kelvin, rtol=1e-4)
    center = third_indicator(empty_system, *empty_pair, [0.0, 0.0, 0.0])
    assert_allclose(center.I1_direct, 1 / (4 * np.pi), rtol=1e-4)
    assert_allclose(center.w1_xx, 1 / (4 * np.pi), rtol=1e-6)


@pytest.mark.parametrize("p", [[0.1, 0, 0], [1.5, 0, 0], [0.305, 0, 0], [0.9995, 0, 0]])
def test_probe_outside_shell_refused(small_system, small_pair, p):
    with pytest.raises(NearSurface):
        third_indicator(small_system, *small_pair, p)


def test_probe_near_surface_threshold(small_system):
    check_probe(small_system, [0.97, 0, 0], eps_near=0.02)
    with pytest.raises(NearSurface):
        check_probe(small_system, [0.99, 0, 0], eps_near=0.02)


def test_scan_skips_and_orders(small_system, small_pair):
    pts = np.array([[0.6, 0, 0], [0.0, 0.0, 0.0], [0, 0.995, 0], [0, 0, 0.5], [2, 0, 0], [-0.45, 0.3, 0]])
    res = scan(small_system, *small_pair, pts, eps_near=0.02)
    assert_allclose([r.x for r in res.records], pts[[0, 3, 5]])
    assert len(res.skipped) == 3
    par = scan(small_system, *small_pair, pts, eps_near=0.02, threads=3)
    assert records_csv(par.records) == records_csv(res.records)


def test_csv_roundtrip(tmp_path, small_system, small_pair):
    res = scan(small_system, *small_pair, [[0.6, 0, 0], [0, 0, -0.5]], eps_near=0.02)
    text = records_csv(res.records)
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    write_csv(tmp_path / "scan.csv", res.records)
    rows = read_csv(tmp_path / "scan.csv")
    assert len(rows) == 2 and rows[0]["verdict"] == "Direct"
    assert_allclose(float(rows[0]["I"]), res.records[0].I_direct, rtol=1e-15)
    assert float(rows[0]["res_1_17"]) == res.records[0].residuals["natural"]


def test_vtk_layout():
    v = np.arange(24, dtype=float).reshape(2, 3, 4)
    v[0, 0, 0] = np.nan
    text = vtk_structured_points(v, (0, 0, 0), (0.5, 0.5, 0.5), name="I_star")
    lines = text.splitlines()
    assert lines[4] == "DIMENSIONS 2 3 4"
    assert lines[7] == "POINT_DATA 24"
    data = lines[10:]
    assert len(data) == 24 and data[0] == "nan"
    assert float(data[1]) == v[1, 0, 0]


def test_invariance_same_domain_is_zero(small_system):
    rep = invariance_check(small_system, small_system, [X, Y])
    assert rep.sup_difference == 0.0
    assert_allclose(rep.w_inner, ORACLE_06["w_xx"], rtol=1e-3)


def test_nesting_violations(small_system, small_domain):
    bigger = BemSystem(Domain(build_sphere_mesh((0, 0, 0), 1.5, 2), small_domain.obstacle))
    with pytest.raises(NestingViolation):
        invariance_check(bigger, small_system, [X])
    other = BemSystem(Domain(build_sphere_mesh((0, 0, 0), 1.5, 2), build_sphere_mesh((0, 0, 0), 0.25, 2)))
    with pytest.raises(NestingViolation):
        invariance_check(small_system, other, [X])


def test_invariance_grows_with_outer_domain(small_system, small_domain):
    bigger = BemSystem(Domain(build_sphere_mesh((0, 0, 0), 1.5, 2), small_domain.obstacle))
    rep = invariance_check(small_system, bigger, [X])
    assert rep.w_outer[0] > rep.w_inner[0] > 0


def test_harmonicity_ratios(small_system):
    out = harmonicity_ratios(small_system, X, Y)
    for name in ("I", "I1"):
        assert_allclose(out[name][2], 4.0, rtol=0.05)


def test_boundary_representations(small_system):
    res = appendix_residuals(small_system, X, Y)
    assert res.resA3 < 1e-4 and res.resA7 < 1e-4
    # series values of w_x(y) - I(x, y) for this pair
    assert_allclose(res.flux_term, -0.0011992334283308593 + 0.0013057117337299268, rtol=1e-3)


def test_needle_strategies(small_domain):
    axes = axis_needles(small_domain, X)
    assert len(axes) == 6
    assert_allclose(axes[0].entry, [1, 0, 0], atol=1e-12)
    lengths = [n.length() for n in axes]
    assert lengths == sorted(lengths)
    radial = radial_needles(small_domain, [0.3, 0.4, 0])
    assert_allclose(radial[0].entry, [0.6, 0.8, 0], atol=1e-12)
    assert_allclose(mid_shell_point(small_domain, [1, 0, 0]), [0.65, 0, 0], atol=1e-9)


def test_point_inside_obstacle_blows_up(small_system, small_pair):
    v = sideB_classify(small_system, *small_pair, [0.0, 0.0, 0.0], reference=0.0063,
                       needle_strategy="straight-from-nearest-boundary")
    assert v.verdict is Verdict.BLOWS_UP
    assert all(t.verdict is Verdict.BLOWS_UP for t in v.trials)
