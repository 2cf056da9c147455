import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import ORACLE_06
from probekit.cli import ConfigError, load_config, main
from probekit.dtn import read_dtn
from probekit.indicator import CSV_COLUMNS, read_csv

CANONICAL_KEYS = ("I", "I1", "W_xx", "I_star", "w_xx", "w1_xx", "w_star_xx", "gap_gg")


def _ini(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def small_ini(tmp_path):
    return _ini(tmp_path / "small.ini", """
[geometry]
outer = sphere 0 0 0 1.0
obstacle = sphere 0 0 0 0.3   # concentric
level = 2

[scan]
n = 4
box = -0.9 -0.9 -0.9 0.9 0.9 0.9

[verify]
criteria = 3
""")


@pytest.fixture
def empty_ini(tmp_path):
    return _ini(tmp_path / "empty.ini", "[geometry]\nobstacle = none\nlevel = 1\n")


def test_defaults():
    cfg = load_config(None)
    assert cfg.level == 3 and cfg.criteria == tuple(range(1, 14))
    assert cfg.obstacle.axes == (0.3, 0.3, 0.3)
    assert cfg.eps_near == 0.02 and cfg.runge.offset == 2.0


def test_full_config(tmp_path):
    (tmp_path / "pts.txt").write_text("0.6 0 0\n0 0.5 0\n")
    cfg = load_config(_ini(tmp_path / "c.ini", """
[geometry]
outer = ellipsoid 0 0 0 1.2 1.0 0.9
obstacle = sphere 0.1 0 0 0.25
level = 1
[data]
binary = true
fine_level = 2
[scan]
points = pts.txt
sequences = yes
needle_strategy = straight-from-nearest-boundary
[runge]
n_max = 4
amplitude0 = 10
[verify]
criteria = 1-3, 10
[oracle]
points = 0.6 0 0; 0.45 0 0
order = 60
"""))
    assert cfg.outer.axes == (1.2, 1.0, 0.9)
    assert cfg.obstacle.center == (0.1, 0.0, 0.0)
    assert cfg.binary and cfg.fine_level == 2 and cfg.sequences
    assert cfg.points == tmp_path / "pts.txt"
    assert cfg.runge.n_max == 4 and cfg.runge.amplitude0 == 10.0
    assert cfg.criteria == (1, 2, 3, 10)
    assert_allclose(cfg.oracle_points, [[0.6, 0, 0], [0.45, 0, 0]])
    assert cfg.oracle_order == 60


@pytest.mark.parametrize("text", [
    "[bogus]\na = 1\n",
    "[geometry]\nouter = cube 1\n",
    "[geometry]\nouter = none\n",
    "[geometry]\nobstacle = sphere 0 0 0\n",
    "[scan]\neps_near = 0\n",
    "[scan]\nneedle_strategy = spiral\n",
    "[scan]\nneedle_strategy = user\n",
    "[scan]\npoints = missing.txt\n",
    "[runge]\nn_max = 2\n",
    "[runge]\nwobble = 1\n",
    "[verify]\ncriteria = 0-4\n",
    "[geometry]\nlevel = two\n",
])
def test_bad_configs(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_ini(tmp_path / "bad.ini", text))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")
    assert main(["mesh", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == 2


def test_oracle_command(capsys, tmp_path):
    assert main(["oracle", "--point", "0.6", "0", "0", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    header = lines[0].split(",")
    row = dict(zip(header, map(float, lines[1].split(","))))
    for key in CANONICAL_KEYS:
        assert_allclose(row[key], ORACLE_06[key], rtol=1e-12)
    assert (tmp_path / "oracle.csv").read_text().splitlines() == lines


def test_oracle_point_outside_shell():
    assert main(["oracle", "--point", "0.2", "0", "0"]) == 2


def test_oracle_needs_concentric_spheres(tmp_path):
    ini = _ini(tmp_path / "e.ini", "[geometry]\nouter = ellipsoid 0 0 0 1 1 0.8\n")
    assert main(["oracle", "--config", str(ini)]) == 2


def test_mesh_forward_scan_verify(tmp_path, small_ini, capsys):
    out = tmp_path / "run"
    args = ["--config", str(small_ini), "--out", str(out)]
    assert main(["mesh", *args]) == 0
    assert (out / "outer.mesh").exists() and (out / "obstacle.mesh").exists()
    assert main(["forward", *args]) == 0
    L0 = read_dtn(out / "lambda0.dtn")
    assert L0.n == 162
    assert main(["scan", *args]) == 0
    rows = read_csv(out / "scan.csv")
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) > 0
    vtk = (out / "scan_I.vtk").read_text().splitlines()
    assert vtk[4] == "DIMENSIONS 4 4 4"
    first = (out / "scan.csv").read_bytes()
    assert main(["scan", *args, "--threads", "2"]) == 0
    assert (out / "scan.csv").read_bytes() == first
    capsys.readouterr()
    assert main(["verify", *args]) == 0
    report = capsys.readouterr().out
    assert "PASS" in report
    assert (out / "verify_report.json").exists()


def test_fingerprint_mismatch_exit_code(tmp_path, small_ini, empty_ini):
    out = tmp_path / "mix"
    assert main(["forward", "--config", str(empty_ini), "--out", str(out)]) == 0
    assert main(["scan", "--config", str(small_ini), "--out", str(out)]) == 2


def test_scan_without_data_exit_code(tmp_path, small_ini):
    assert main(["scan", "--config", str(small_ini), "--out", str(tmp_path / "none")]) == 2


def test_no_obstacle_pipeline(tmp_path, empty_ini, capsys):
    out = tmp_path / "empty"
    args = ["--config", str(empty_ini), "--out", str(out)]
    assert main(["forward", *args]) == 0
    raw0 = (out / "lambda0.dtn").read_bytes()
    rawD = (out / "lambdaD.dtn").read_bytes()
    assert raw0.split(b"\n", 4)[4] == rawD.split(b"\n", 4)[4]
    capsys.readouterr()
    assert main(["verify", *args]) == 0
    assert "PASS" in capsys.readouterr().out


def test_corrupt_mesh_file_exit_code(tmp_path):
    (tmp_path / "bad.mesh").write_text("PROBEKIT-MESH 1\n3 1\n0 0 0\n1 0 0\n0 1 0\n0 1 2\n")
    ini = _ini(tmp_path / "f.ini", "[geometry]\nouter = file bad.mesh\nobstacle = none\n")
    assert main(["mesh", "--config", str(ini), "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "probekit", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("mesh", "forward", "scan", "verify", "oracle"):
        assert cmd in proc.stdout


def test_bad_thread_count(tmp_path):
    assert main(["scan", "--threads", "0", "--out", str(tmp_path)]) == 2
