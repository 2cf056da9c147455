import numpy as np
import pytest
from numpy.testing import assert_allclose

from probekit.bvp import BoundaryTrace
from probekit.dtn import (
    BACKGROUND, WITH_OBSTACLE, assemble_dtn, assemble_dtn_pair, dtn_bytes, gap_matrix, gap_pair,
    project_dtn, read_dtn, source_trace, write_dtn,
)
from probekit.errors import BasisMismatch, FingerprintMismatch, InputError
from probekit.geometry import Domain, build_sphere_mesh
from probekit.oracle import gap_pairing_sources


def _rayleigh(dtn, f):
    return (f @ dtn.mass @ dtn.matrix @ f) / (f @ dtn.mass @ f)


def _shell_eigenvalue(l, R1):
    # Dirichlet data Y_l on the unit sphere, zero flux on the sphere of radius R1
    t = R1 ** (2 * l + 1)
    return l * (1 - t) / (1 + l / (l + 1) * t)


def test_pair_metadata(small_pair, small_system):
    L0, LD = small_pair
    assert L0.provenance == BACKGROUND and LD.provenance == WITH_OBSTACLE
    assert L0.fingerprint == LD.fingerprint == small_system.outer.fingerprint()
    assert L0.n == small_system.n_outer


@pytest.mark.parametrize("which", [0, 1])
def test_self_adjoint_and_constants_in_kernel(small_pair, which):
    dtn = small_pair[which]
    assert dtn.symmetry_residual() <= 1e-3
    assert dtn.constant_residual() <= 1e-10
    assert dtn.raw_asymmetry > dtn.symmetry_residual()


def test_background_spectrum_on_unit_sphere(small_pair, small_system):
    L0, _ = small_pair
    x, y, z = small_system.outer.vertices.T
    assert_allclose(_rayleigh(L0, x), 1.0, rtol=2e-3)
    assert_allclose(_rayleigh(L0, x * y), 2.0, rtol=1e-2)
    assert_allclose(_rayleigh(L0, 5 * z**3 - 3 * z), 3.0, rtol=2e-2)


def test_obstacle_spectrum_on_concentric_spheres(small_pair, small_system):
    L0, LD = small_pair
    x, y, _ = small_system.outer.vertices.T
    gap1 = _rayleigh(L0, x) - _rayleigh(LD, x)
    gap2 = _rayleigh(L0, x * y) - _rayleigh(LD, x * y)
    assert_allclose(gap1, 1 - _shell_eigenvalue(1, 0.3), rtol=2e-3)
    assert_allclose(gap2, 2 - _shell_eigenvalue(2, 0.3), rtol=2e-2)


def test_gap_is_positive_semidefinite(small_pair):
    B = gap_matrix(*small_pair)
    ev = np.linalg.eigvalsh(0.5 * (B + B.T))
    assert ev.min() >= -1e-12 * ev.max()
    assert ev.max() > 0


@pytest.mark.parametrize("pole", [(1.2, 0.0, 0.0), (0.0, 0.0, 2.0)])
def test_gap_pairing_of_sources_matches_series(small_pair, small_system, pole):
    g = source_trace(small_system.outer, pole)
    ref = gap_pairing_sources(1.0, 0.3, [pole], [1.0], [pole], [1.0])
    assert_allclose(gap_pair(*small_pair, g, g), ref, rtol=5e-3)


def test_coupled_assembly_agrees(small_system, small_pair):
    _, LD = assemble_dtn_pair(small_system, method="coupled")
    x = small_system.outer.vertices[:, 0]
    assert_allclose(_rayleigh(LD, x), _rayleigh(small_pair[1], x), rtol=1e-3)
    with pytest.raises(ValueError):
        assemble_dtn_pair(small_system, method="bogus")


def test_no_obstacle_pair_is_identical(empty_pair):
    L0, LD = empty_pair
    assert np.array_equal(L0.matrix, LD.matrix)
    assert gap_pair(L0, LD, np.ones(L0.n), np.ones(L0.n)) == 0.0


def test_assemble_single_map(empty_system, empty_pair):
    assert_allclose(assemble_dtn(empty_system).matrix, empty_pair[1].matrix, atol=1e-13)
    assert assemble_dtn(empty_system, background=True).provenance == BACKGROUND


def test_basis_mismatch(small_pair):
    L0, LD = small_pair
    with pytest.raises(BasisMismatch):
        gap_pair(L0, LD, np.ones(L0.n - 1), np.ones(L0.n))
    other = build_sphere_mesh((0, 0, 0), 1.0 + 1e-6, 2)
    with pytest.raises(BasisMismatch):
        gap_pair(L0, LD, BoundaryTrace(other, np.ones(L0.n)), np.ones(L0.n))
    with pytest.raises(BasisMismatch):
        gap_pair(L0, assemble_dtn(Domain(build_sphere_mesh((0, 0, 0), 1.0, 1))), np.ones(L0.n), np.ones(L0.n))


def test_projection_to_coarse_mesh(small_pair, small_system):
    coarse = build_sphere_mesh((0, 0, 0), 1.0, 1)
    P = project_dtn(small_pair[0], small_system.outer, coarse)
    assert P.fingerprint == coarse.fingerprint()
    assert_allclose(_rayleigh(P, coarse.vertices[:, 0]), 1.0, rtol=5e-3)
    with pytest.raises(BasisMismatch):
        project_dtn(small_pair[0], coarse, coarse)


@pytest.mark.parametrize("binary", [False, True])
def test_file_roundtrip(tmp_path, small_pair, binary):
    L0 = small_pair[0]
    write_dtn(tmp_path / "l0.dtn", L0, binary=binary)
    back = read_dtn(tmp_path / "l0.dtn", expected_fingerprint=L0.fingerprint, provenance=BACKGROUND)
    assert np.array_equal(back.matrix, L0.matrix)
    assert np.array_equal(back.mass, L0.mass)
    assert back.provenance == BACKGROUND
    assert dtn_bytes(back, binary) == (tmp_path / "l0.dtn").read_bytes()


def test_fingerprint_mismatch(tmp_path, small_pair):
    write_dtn(tmp_path / "l.dtn", small_pair[1])
    with pytest.raises(FingerprintMismatch):
        read_dtn(tmp_path / "l.dtn", expected_fingerprint="0" * 32)


def test_malformed_files(tmp_path, small_pair):
    (tmp_path / "bad.dtn").write_text("hello\n")
    with pytest.raises(InputError):
        read_dtn(tmp_path / "bad.dtn")
    data = dtn_bytes(small_pair[1], binary=True)
    (tmp_path / "cut.dtn").write_bytes(data[:-8])
    with pytest.raises(InputError):
        read_dtn(tmp_path / "cut.dtn")
    lines = dtn_bytes(small_pair[1]).decode().splitlines()
    lines[4] = "oops " + lines[4].split(" ", 1)[1]
    (tmp_path / "word.dtn").write_text("\n".join(lines) + "\n")
    with pytest.raises(InputError):
        read_dtn(tmp_path / "word.dtn")
