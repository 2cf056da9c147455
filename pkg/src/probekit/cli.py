"""Command-line front end: meshes, DtN synthesis, scans, verification, oracle.

Configuration is an INI file.  Every section and key is optional; the
defaults describe the canonical configuration (unit ball with a
concentric obstacle of radius 0.3, mesh level 3)::

    [geometry]
    outer = sphere 0 0 0 1.0          # or: ellipsoid cx cy cz a b c | file PATH
    obstacle = sphere 0 0 0 0.3       # or: none
    level = 3

    [data]
    lambda0 = lambda0.dtn             # relative to --out
    lambdaD = lambdaD.dtn
    binary = false
    fine_level =                      # synthesize on a finer mesh and project

    [scan]
    box = -0.95 -0.95 -0.95 0.95 0.95 0.95
    n = 11
    points =                          # file with one "x y z" per line
    eps_near = 0.02
    sequences = false
    needle_strategy = axis-set        # or straight-from-nearest-boundary | user
    needles =                         # needle files for the user strategy
    vtk_column = I

    [runge]                           # any NeedleSequenceConfig field
    offset = 2.0

    [verify]
    criteria = 1-13
    seed = 20240611

    [oracle]
    points = 0.6 0 0; 0.45 0 0
    order = 40

Exit codes: 0 success, 1 failed criterion or solver failure, 2 input error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from probekit.bvp import BemSystem
from probekit.dtn import (
    BACKGROUND, WITH_OBSTACLE, assemble_dtn_pair, project_dtn, read_dtn, write_dtn,
)
from probekit.errors import BasisMismatch, InputError, ProbekitError
from probekit.geometry import (
    Domain, TriSurface, atomic_write_text, box_grid, build_ellipsoid_mesh, read_mesh,
    read_needle, write_mesh,
)
from probekit.indicator import (
    CSV_COLUMNS, NEEDLE_STRATEGIES, axis_needles, baseline_reference, scan,
    vtk_structured_points, write_csv,
)
from probekit.oracle import oracle_indicators, oracle_solve
from probekit.runge import NeedleSequenceConfig
from probekit.suite import SEED, SuiteContext, SuiteReport, degenerate_check, run_suite

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_INPUT = 0, 1, 2
ORACLE_COLUMNS = ("x", "y", "z", "I", "I1", "W_xx", "I_star", "w_xx", "w1_xx", "w_star_xx", "gap_gg")


class ConfigError(InputError):
    """Unparseable or inconsistent configuration."""


@dataclass
class SurfaceSpec:
    kind: str                  # "ellipsoid" or "file"
    center: tuple = (0.0, 0.0, 0.0)
    axes: tuple = (1.0, 1.0, 1.0)
    path: Path | None = None

    def build(self, level: int) -> TriSurface:
        if self.kind == "file":
            if not self.path.exists():
                raise ConfigError(f"mesh file {self.path} does not exist")
            return read_mesh(self.path)
        return build_ellipsoid_mesh(self.center, self.axes, level)


@dataclass
class RunConfig:
    """Parsed configuration with defaults for every field."""

    outer: SurfaceSpec = field(default_factory=lambda: SurfaceSpec("ellipsoid"))
    obstacle: SurfaceSpec | None = field(
        default_factory=lambda: SurfaceSpec("ellipsoid", axes=(0.3, 0.3, 0.3)))
    level: int = 3
    lambda0: str = "lambda0.dtn"
    lambdaD: str = "lambdaD.dtn"
    binary: bool = False
    fine_level: int | None = None
    box: tuple = (-0.95, -0.95, -0.95, 0.95, 0.95, 0.95)
    n: int = 11
    points: Path | None = None
    eps_near: float = 0.02
    sequences: bool = False
    needle_strategy: str = "axis-set"
    needles: tuple = ()
    vtk_column: str = "I"
    runge: NeedleSequenceConfig = field(default_factory=NeedleSequenceConfig)
    criteria: tuple = tuple(range(1, 14))
    seed: int = SEED
    oracle_points: np.ndarray = field(default_factory=lambda: np.array([[0.6, 0.0, 0.0]]))
    oracle_order: int = 40

    def domain(self) -> Domain:
        outer = self.outer.build(self.level)
        obstacle = self.obstacle.build(self.level) if self.obstacle is not None else None
        return Domain(outer, obstacle)


def _floats(text: str, n: int | None = None, what: str = "value") -> tuple:
    try:
        vals = tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"{what}: expected {n} numbers, got {len(vals)}")
    return vals


def _surface(text: str, base: Path, what: str) -> SurfaceSpec | None:
    tok = text.split(None, 1)
    if not tok:
        raise ConfigError(f"{what}: empty surface specification")
    kind = tok[0].lower()
    rest = tok[1] if len(tok) > 1 else ""
    if kind == "none":
        return None
    if kind == "sphere":
        v = _floats(rest, 4, what)
        if v[3] <= 0:
            raise ConfigError(f"{what}: radius must be positive")
        return SurfaceSpec("ellipsoid", v[:3], (v[3],) * 3)
    if kind == "ellipsoid":
        v = _floats(rest, 6, what)
        if min(v[3:]) <= 0:
            raise ConfigError(f"{what}: semi-axes must be positive")
        return SurfaceSpec("ellipsoid", v[:3], v[3:])
    if kind == "file":
        p = Path(rest.strip())
        return SurfaceSpec("file", path=p if p.is_absolute() else base / p)
    raise ConfigError(f"{what}: unknown surface kind {kind!r}")


def _criteria(text: str) -> tuple:
    out = []
    for part in text.replace(",", " ").split():
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if not out or any(not 1 <= k <= 13 for k in out):
        raise ConfigError(f"criteria: expected numbers in 1..13, got {text!r}")
    return tuple(sorted(set(out)))


def _runge(section, base: NeedleSequenceConfig) -> NeedleSequenceConfig:
    names = {f.name for f in dataclasses.fields(NeedleSequenceConfig)}
    changes = {}
    for key, raw in section.items():
        if key not in names:
            raise ConfigError(f"[runge] unknown key {key!r}")
        default = getattr(base, key)
        try:
            changes[key] = type(default)(raw) if not isinstance(default, str) else raw.strip()
        except ValueError as exc:
            raise ConfigError(f"[runge] {key}: {exc}") from exc
    try:
        return dataclasses.replace(base, **changes)
    except ValueError as exc:
        raise ConfigError(f"[runge] {exc}") from exc


def load_config(path: str | Path | None) -> RunConfig:
    """Parse an INI configuration; ``None`` gives the canonical defaults.

    Raises
    ------
    ConfigError
        On unknown sections, unparseable values, missing files or
        non-positive tolerances.
    """
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent
    known = {"geometry", "data", "scan", "runge", "verify", "oracle"}
    extra = set(parser.sections()) - known
    if extra:
        raise ConfigError(f"{path}: unknown sections {sorted(extra)}")
    try:
        if parser.has_section("geometry"):
            g = parser["geometry"]
            if "outer" in g:
                cfg.outer = _surface(g["outer"], base, "outer")
                if cfg.outer is None:
                    raise ConfigError("outer surface cannot be 'none'")
            if "obstacle" in g:
                cfg.obstacle = _surface(g["obstacle"], base, "obstacle")
            cfg.level = g.getint("level", cfg.level)
        if parser.has_section("data"):
            d = parser["data"]
            cfg.lambda0 = d.get("lambda0", cfg.lambda0)
            cfg.lambdaD = d.get("lambdaD", cfg.lambdaD)
            cfg.binary = d.getboolean("binary", cfg.binary)
            fl = d.get("fine_level", "").strip()
            cfg.fine_level = int(fl) if fl else None
        if parser.has_section("scan"):
            s = parser["scan"]
            if "box" in s:
                cfg.box = _floats(s["box"], 6, "box")
            cfg.n = s.getint("n", cfg.n)
            if s.get("points", "").strip():
                cfg.points = base / s["points"].strip()
                if not cfg.points.exists():
                    raise ConfigError(f"points file {cfg.points} does not exist")
            cfg.eps_near = s.getfloat("eps_near", cfg.eps_near)
            cfg.sequences = s.getboolean("sequences", cfg.sequences)
            cfg.needle_strategy = s.get("needle_strategy", cfg.needle_strategy).strip()
            cfg.needles = tuple(base / p for p in s.get("needles", "").split())
            cfg.vtk_column = s.get("vtk_column", cfg.vtk_column).strip()
        if parser.has_section("runge"):
            cfg.runge = _runge(parser["runge"], cfg.runge)
        if parser.has_section("verify"):
            v = parser["verify"]
            if "criteria" in v:
                cfg.criteria = _criteria(v["criteria"])
            cfg.seed = v.getint("seed", cfg.seed)
        if parser.has_section("oracle"):
            o = parser["oracle"]
            if "points" in o:
                cfg.oracle_points = np.array([_floats(p, 3, "oracle point")
                                              for p in o["points"].split(";") if p.strip()])
            cfg.oracle_order = o.getint("order", cfg.oracle_order)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if cfg.eps_near <= 0:
        raise ConfigError("eps_near must be positive")
    if cfg.level < 0 or cfg.n < 2:
        raise ConfigError("level must be >= 0 and n >= 2")
    if cfg.needle_strategy not in (*NEEDLE_STRATEGIES, "user"):
        raise ConfigError(f"unknown needle strategy {cfg.needle_strategy!r}")
    if cfg.needle_strategy == "user" and not cfg.needles:
        raise ConfigError("the user needle strategy needs a 'needles' list")
    for p in cfg.needles:
        if not p.exists():
            raise ConfigError(f"needle file {p} does not exist")
    return cfg


# ----------------------------------------------------------------------------
# commands


def _data_path(out: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else out / p


def cmd_mesh(cfg: RunConfig, out: Path) -> int:
    dom = cfg.domain()
    write_mesh(dom.outer, out / "outer.mesh")
    if dom.obstacle is not None:
        write_mesh(dom.obstacle, out / "obstacle.mesh")
    print(f"outer: {dom.outer.n_vertices} vertices, fingerprint {dom.outer.fingerprint()}")
    if dom.obstacle is not None:
        print(f"obstacle: {dom.obstacle.n_vertices} vertices, fingerprint {dom.obstacle.fingerprint()}")
    return EXIT_OK


def cmd_forward(cfg: RunConfig, out: Path) -> int:
    dom = cfg.domain()
    if cfg.fine_level is not None:
        if cfg.outer.kind == "file" or (cfg.obstacle is not None and cfg.obstacle.kind == "file"):
            raise ConfigError("fine-mesh synthesis needs analytic surfaces")
        fine_cfg = dataclasses.replace(cfg, level=cfg.fine_level)
        fine = fine_cfg.domain()
        F0, FD = assemble_dtn_pair(BemSystem(fine))
        L0 = project_dtn(F0, fine.outer, dom.outer)
        LD = project_dtn(FD, fine.outer, dom.outer)
        logger.info("synthesized on level %d and projected to level %d", cfg.fine_level, cfg.level)
    else:
        L0, LD = assemble_dtn_pair(BemSystem(dom))
    p0, pD = _data_path(out, cfg.lambda0), _data_path(out, cfg.lambdaD)
    write_dtn(p0, L0, cfg.binary)
    write_dtn(pD, LD, cfg.binary)
    print(f"wrote {p0} and {pD} (n = {L0.n}, fingerprint {L0.fingerprint}, "
          f"raw asymmetry {LD.raw_asymmetry:.2e}, inverse crime: {cfg.fine_level is None})")
    return EXIT_OK


def _read_pair(cfg: RunConfig, dom: Domain, out: Path):
    fp = dom.outer.fingerprint()
    p0, pD = _data_path(out, cfg.lambda0), _data_path(out, cfg.lambdaD)
    for p in (p0, pD):
        if not p.exists():
            raise ConfigError(f"DtN file {p} does not exist; run 'forward' first")
    return read_dtn(p0, fp, BACKGROUND), read_dtn(pD, fp, WITH_OBSTACLE)


def _scan_points(cfg: RunConfig) -> tuple[np.ndarray, tuple | None]:
    if cfg.points is not None:
        try:
            P = np.loadtxt(cfg.points, ndmin=2)
        except ValueError as exc:
            raise ConfigError(f"{cfg.points}: {exc}") from exc
        if P.shape[1] != 3:
            raise ConfigError(f"{cfg.points}: expected three columns")
        return P, None
    lo, hi = np.array(cfg.box[:3]), np.array(cfg.box[3:])
    return box_grid(lo, hi, cfg.n), (lo, hi)


def _strategy(cfg: RunConfig, dom: Domain):
    if cfg.needle_strategy != "user":
        return cfg.needle_strategy
    needles = [read_needle(p, dom) for p in cfg.needles]

    def user(domain, x):
        own = [nd for nd in needles if np.allclose(nd.tip, x, atol=1e-9)]
        return own or axis_needles(domain, x)
    return user


def cmd_scan(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    dom = cfg.domain()
    system = BemSystem(dom)
    L0, LD = _read_pair(cfg, dom, out)
    P, box = _scan_points(cfg)
    reference = None
    if cfg.sequences and dom.obstacle is not None:
        reference = baseline_reference(system, L0, LD, cfg.runge)
    res = scan(system, L0, LD, P, cfg.eps_near, cfg.sequences, reference,
               _strategy(cfg, dom), cfg.runge, threads)
    write_csv(out / "scan.csv", res.records)
    print(f"wrote {out / 'scan.csv'}: {len(res.records)} rows, {len(res.skipped)} points skipped")
    if box is not None:
        lo, hi = box
        values = np.full(len(P), np.nan)
        col = _column(cfg.vtk_column)
        index = {tuple(p): i for i, p in enumerate(P)}
        for rec in res.records:
            values[index[tuple(rec.x)]] = float(rec.csv_row()[col])
        spacing = (hi - lo) / (cfg.n - 1)
        text = vtk_structured_points(values.reshape(cfg.n, cfg.n, cfg.n), lo, spacing, cfg.vtk_column)
        atomic_write_text(out / f"scan_{cfg.vtk_column}.vtk", text)
    return EXIT_OK


def _column(name: str) -> int:
    if name not in CSV_COLUMNS[3:-1]:
        raise ConfigError(f"vtk_column must be one of {CSV_COLUMNS[3:-1]}")
    return CSV_COLUMNS.index(name)


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    dom = cfg.domain()
    L0, LD = _read_pair(cfg, dom, out)
    if dom.obstacle is None:
        c = dom.outer.vertices.mean(axis=0)
        reach = float(np.min(np.linalg.norm(dom.outer.vertices - c, axis=1)))
        x = c + 0.6 * reach * np.array([1.0, 0.0, 0.0])
        report = SuiteReport([degenerate_check(BemSystem(dom), L0, LD, x, cfg.runge)])
    else:
        ctx = SuiteContext(dom, L0, LD, cfg.runge, cfg.level, cfg.seed, cfg.oracle_order)
        report = run_suite(ctx, cfg.criteria)
    atomic_write_text(out / "verify_report.txt", report.text())
    atomic_write_text(out / "verify_report.json", report.json())
    sys.stdout.write(report.text())
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_oracle(cfg: RunConfig, out: Path | None, points=None) -> int:
    o, d = cfg.outer, cfg.obstacle
    ok = (o.kind == "ellipsoid" and len(set(o.axes)) == 1 and not any(o.center)
          and (d is None or (d.kind == "ellipsoid" and len(set(d.axes)) == 1 and not any(d.center))))
    if not ok:
        raise ConfigError("the oracle needs concentric spheres about the origin")
    R0, R1 = o.axes[0], (d.axes[0] if d is not None else 0.0)
    P = np.atleast_2d(points) if points is not None else cfg.oracle_points
    lines = [",".join(ORACLE_COLUMNS)]
    for x in P:
        try:
            v = oracle_indicators(oracle_solve(R0, R1, x, cfg.oracle_order))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        vals = [*x, v.I, v.I1, v.W_xx, v.I_star, v.w_xx, v.w1_xx, v.w_star_xx, v.gap_gg]
        lines.append(",".join(f"{float(t):.17g}" for t in vals))
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out is not None:
        atomic_write_text(out / "oracle.csv", text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="probekit", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--out", type=Path, help="output directory (default: current)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for scans")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("mesh", parents=[common], help="write the surface meshes")
    sub.add_parser("forward", parents=[common], help="synthesize the DtN pair")
    sub.add_parser("scan", parents=[common], help="indicator field over a grid")
    sub.add_parser("verify", parents=[common], help="run the identity suite")
    orc = sub.add_parser("oracle", parents=[common], help="series values as CSV")
    orc.add_argument("--point", type=float, nargs=3, action="append",
                     help="evaluation point (repeatable)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg = load_config(args.config)
        if args.command == "oracle":
            if args.out is not None:
                args.out.mkdir(parents=True, exist_ok=True)
            return cmd_oracle(cfg, args.out, args.point)
        out = args.out or Path(".")
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "mesh":
            return cmd_mesh(cfg, out)
        if args.command == "forward":
            return cmd_forward(cfg, out)
        if args.command == "scan":
            return cmd_scan(cfg, out, args.threads)
        return cmd_verify(cfg, out)
    except (InputError, BasisMismatch) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ProbekitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
