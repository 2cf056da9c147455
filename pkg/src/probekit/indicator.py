"""Indicator functions, computed from boundary data and directly.

Two independent routes are provided for every quantity:

* **direct**: boundary-element solutions of the shell problems, with all
  energy integrals reduced to surface integrals by Green's identity;
* **from data**: the gap operator ``Lambda_0 - Lambda_D`` paired with
  traces of explicit functions (the point source and its needle
  sequences).

Sequence limits are extracted stage by stage.  After ``min_stages`` stages
each new value is tested with :func:`probekit.runge.limit_verdict`, and the
run stops at the first plateau (or at the first confirmed blow-up).  The
stopping rule matters in practice: later stages of a short needle have very
large traces whose gap pairing is dominated by discretization error, so
running every stage can move a converged value away from its limit.

Notation used below (for a probe point ``x``):

``w``
    reflected solution, zero on the outer surface;
``w1``
    auxiliary solution, equal to ``G(. - x)`` on the outer surface;
``W``
    solution with both data, ``W = w + w1`` up to solver error;
``wstar``
    ``w + z`` with ``z`` the obstacle response to the regular part ``R_x``
    of the Green function of ``Omega``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from probekit.bvp import (
    BemSystem,
    HarmonicSolution,
    auxiliary_solution,
    green_regular,
    reflected_solution,
    response_to,
    third_solution,
)
from probekit.dtn import DtNMatrix, gap_pair, source_flux_load, source_trace
from probekit.errors import NearSurface, NestingViolation, NotConverged, ProbekitError
from probekit.geometry import (
    Domain,
    Needle,
    NeedleContact,
    atomic_write_text,
    needle_hits_obstacle,
    straight_needle,
)
from probekit.potential import (
    G,
    energy_integral_exterior,
    energy_integral_obstacle,
    grad_G,
    surface_samples,
)
from probekit.runge import (
    NeedleSequence,
    NeedleSequenceConfig,
    Verdict,
    build_needle_sequence,
    limit_verdict,
)

logger = logging.getLogger(__name__)

MIN_STAGES = 3
CSV_COLUMNS = ("x", "y", "z", "I", "w_xx", "I1", "w1_xx", "W_xx", "I_star",
               "res_1_17", "res_1_18", "res_4_7", "verdict")
AXES = np.vstack([np.eye(3), -np.eye(3)])


def _system(domain_or_system) -> BemSystem:
    if isinstance(domain_or_system, BemSystem):
        return domain_or_system
    return BemSystem(domain_or_system)


def _rel(a: float, b: float, scale: float | None = None) -> float:
    s = max(abs(b), abs(a)) if scale is None else abs(scale)
    return 0.0 if s == 0 else abs(a - b) / s


def check_probe(system: BemSystem, x, eps_near: float | None = None) -> np.ndarray:
    """Return ``x`` as an array after checking it is admissible.

    Raises
    ------
    NearSurface
        If ``x`` is outside the shell or within ``eps_near`` of a surface
        (default: the solver's own evaluation limits).
    """
    x = np.asarray(x, dtype=float).reshape(3)
    P = x[None, :]
    eo = system.eps_outer if eps_near is None else eps_near
    if system.outer.signed_distance(P)[0] > -eo:
        raise NearSurface(f"probe {x} is outside or within {eo:.3g} of the outer surface")
    if system.obstacle is not None:
        ed = system.eps_obstacle if eps_near is None else eps_near
        if system.obstacle.signed_distance(P)[0] < ed:
            raise NearSurface(f"probe {x} is inside or within {ed:.3g} of the obstacle")
    return x


# ----------------------------------------------------------------------------
# direct (boundary-element) quantities


@dataclass(frozen=True)
class DirectFields:
    """All shell solutions for one source point."""

    x: np.ndarray
    w: HarmonicSolution
    w1: HarmonicSolution
    W: HarmonicSolution
    R: HarmonicSolution
    wstar: HarmonicSolution


def direct_fields(system: BemSystem, x) -> DirectFields:
    x = np.asarray(x, dtype=float)
    R = green_regular(system, x)
    w = reflected_solution(system, x)
    wstar = w + response_to(system, R)
    return DirectFields(x, w, auxiliary_solution(system, x), third_solution(system, x), R, wstar)


def _obstacle_flux_pairing(system: BemSystem, x, u: HarmonicSolution | None,
                           y=None) -> float:
    """``int_dD d_nu G(. - y) u dS`` (``y`` defaults to ``x``; ``u`` its trace)."""
    y = x if y is None else y
    s = surface_samples(system.obstacle, np.vstack([x, y]))
    dnu = np.einsum("ni,ni->n", grad_G(s.points - y), s.normals)
    return float(np.sum(s.weights * dnu * u.dirichlet_at("obstacle", s)))


def _outer_flux_pairing(system: BemSystem, u: HarmonicSolution, y, near=None) -> float:
    """``int_dOmega d_n u G(. - y) dS`` with the outward normal."""
    pts = np.atleast_2d(y) if near is None else np.vstack([np.atleast_2d(y), np.atleast_2d(near)])
    s = surface_samples(system.outer, pts)
    return float(np.sum(s.weights * u.neumann_at("outer", s) * G(s.points - y)))


def probe_indicator_direct(system, x, fields: DirectFields | None = None) -> float:
    """``I(x)``: energy of ``w_x`` in the shell plus ``int_D |grad G|^2``.

    Both terms are reduced to the obstacle surface:
    ``int |grad w|^2 = int_dD w d_nu G`` and the obstacle energy via
    :func:`probekit.potential.energy_integral_obstacle`.

    Raises
    ------
    NearSurface
        If ``x`` is not an admissible probe.
    """
    system = _system(system)
    x = check_probe(system, x)
    if system.obstacle is None:
        return 0.0
    w = fields.w if fields is not None else reflected_solution(system, x)
    return _obstacle_flux_pairing(system, x, w) + energy_integral_obstacle(x, x, system.obstacle)


def auxiliary_indicator_direct(system, x, fields: DirectFields | None = None) -> float:
    """``I1(x)``: energy of ``w1_x`` plus the exterior energy of ``G(. - x)``."""
    system = _system(system)
    x = check_probe(system, x)
    w1 = fields.w1 if fields is not None else auxiliary_solution(system, x)
    return _outer_flux_pairing(system, w1, x) + energy_integral_exterior(x, x, system.outer)


def star_indicator_direct(system, x, fields: DirectFields | None = None) -> float:
    """``I*(x)``: energy of ``w*_x`` plus ``int_D |grad G_Omega|^2``.

    With ``G_Omega = G + R_x`` harmonic across ``D`` both terms reduce to
    ``int_dD d_nu G_Omega (w* + G_Omega) dS``.
    """
    system = _system(system)
    x = check_probe(system, x)
    if system.obstacle is None:
        return 0.0
    f = fields if fields is not None else direct_fields(system, x)
    s = surface_samples(system.obstacle, x[None, :])
    g_omega = G(s.points - x) + f.R.dirichlet_at("obstacle", s)
    dnu = np.einsum("ni,ni->n", grad_G(s.points - x), s.normals) + f.R.neumann_at("obstacle", s)
    return float(np.sum(s.weights * dnu * (f.wstar.dirichlet_at("obstacle", s) + g_omega)))


def third_energy_direct(system: BemSystem, x, fields: DirectFields) -> float:
    """Energy form of ``W_x(x)``: shell energy of ``W`` plus the energy of
    ``G(. - x)`` outside the shell, every term boundary-reduced."""
    x = np.asarray(x, dtype=float)
    e = _outer_flux_pairing(system, fields.W, x) + energy_integral_exterior(x, x, system.outer)
    if system.obstacle is not None:
        e += _obstacle_flux_pairing(system, x, fields.W)
        e += energy_integral_obstacle(x, x, system.obstacle)
    return e


# ----------------------------------------------------------------------------
# needle-free data quantities


def I1_from_data(LD: DtNMatrix, x, outer=None, g: np.ndarray | None = None) -> float:
    """``<Lambda_D G - d_nu G, G>`` for ``G = G(. - x)`` on the outer surface.

    ``outer`` is the outer surface the DtN matrix lives on.  No needle
    sequence is involved.

    Raises
    ------
    NearSurface
        If ``x`` is not strictly inside ``outer``.
    """
    x = np.asarray(x, dtype=float)
    if outer.signed_distance(x[None, :])[0] >= 0:
        raise NearSurface(f"probe {x} is not inside the outer surface")
    g = source_trace(outer, x) if g is None else g
    return float(g @ (LD.mass @ (LD.matrix @ g)) - source_flux_load(outer, x) @ g)


def lifted_I1_from_data(LD: DtNMatrix, x, y, outer, gx=None, gy=None) -> float:
    """``I1(x, y) = <Lambda_D G_x - d_nu G_x, G_y>``."""
    gx = source_trace(outer, x) if gx is None else gx
    gy = source_trace(outer, y) if gy is None else gy
    return float(gy @ (LD.mass @ (LD.matrix @ gx)) - source_flux_load(outer, x) @ gy)


def source_gap(L0: DtNMatrix, LD: DtNMatrix, x, outer, g=None) -> float:
    """``<(Lambda_0 - Lambda_D) G, G>`` for the point source at ``x``."""
    g = source_trace(outer, x) if g is None else g
    return gap_pair(L0, LD, g, g)


# ----------------------------------------------------------------------------
# staged sequences


@dataclass(frozen=True)
class SequenceRun:
    """Per-stage pairings of one needle sequence with the gap operator.

    Attributes
    ----------
    s : tuple of float
        ``<(Lambda_0 - Lambda_D) v_n, v_n>`` (the indicator sequence).
    c : tuple of float
        ``<(Lambda_0 - Lambda_D) v_n, G(. - x)>``.
    gap_gg : float
        ``<(Lambda_0 - Lambda_D) G, G>``.
    """

    x: np.ndarray
    needle: Needle
    s: tuple
    c: tuple
    gap_gg: float

    @property
    def n_stages(self) -> int:
        return len(self.s)

    def probe(self) -> np.ndarray:
        return np.asarray(self.s)

    def singular(self) -> np.ndarray:
        """``-<gap v_n, G_n>`` with ``G_n = G - v_n`` on the boundary."""
        return np.asarray(self.s) - np.asarray(self.c)

    def star(self) -> np.ndarray:
        """``<gap G_n, G_n>``: the corrected sequence ``v_n + R_x``."""
        return np.asarray(self.s) - 2.0 * np.asarray(self.c) + self.gap_gg

    def series(self, name: str) -> np.ndarray:
        return {"probe": self.probe, "singular": self.singular, "star": self.star}[name]()


def run_sequence(L0: DtNMatrix, LD: DtNMatrix, seq: NeedleSequence, outer,
                 watch: Sequence[str] = ("probe",), reference: float | None = None,
                 min_stages: int = MIN_STAGES, rtol: float = 0.01,
                 g: np.ndarray | None = None, early_stop: bool = True) -> SequenceRun:
    """Evaluate the staged pairings, stopping at the first decision.

    The run stops once every watched series has a plateau, or as soon as
    one of them is confirmed to blow up against ``reference``.
    """
    x = seq.tip
    g = source_trace(outer, x) if g is None else g
    gg = gap_pair(L0, LD, g, g)
    s, c = [], []
    run = SequenceRun(x, seq.needle, (), (), gg)
    for n in range(1, seq.n_stages + 1):
        t = seq.trace(n, outer, L0.mass)
        s.append(gap_pair(L0, LD, t, t))
        c.append(gap_pair(L0, LD, t, g))
        run = SequenceRun(x, seq.needle, tuple(s), tuple(c), gg)
        if not early_stop or n < min_stages:
            continue
        verdicts = [limit_verdict(run.series(k), reference, rtol).verdict for k in watch]
        if Verdict.BLOWS_UP in verdicts or all(v is Verdict.CONVERGED for v in verdicts):
            break
    logger.debug("sequence at %s: %d stages, s=%s", x, run.n_stages, run.s)
    return run


@dataclass(frozen=True)
class SequenceLimit:
    value: float
    values: tuple
    verdict: Verdict


def _limit(values, reference, rtol, what: str, strict: bool) -> SequenceLimit:
    res = limit_verdict(values, reference, rtol)
    out = SequenceLimit(res.value, tuple(float(v) for v in values), res.verdict)
    if strict and res.verdict is Verdict.INCONCLUSIVE:
        raise NotConverged(f"{what} sequence has no plateau", out.values)
    return out


def probe_indicator_from_data(L0: DtNMatrix, LD: DtNMatrix, seq: NeedleSequence, outer,
                              domain: Domain | None = None, reference: float | None = None,
                              rtol: float = 0.01, run: SequenceRun | None = None) -> SequenceLimit:
    """Limit of ``s_n = <(Lambda_0 - Lambda_D) v_n, v_n>``.

    When ``domain`` is given and the needle meets the obstacle the sequence
    is still evaluated, but it is returned with its growth verdict rather
    than raising.

    Raises
    ------
    NotConverged
        If an avoiding needle gives no plateau.
    """
    hits = domain is not None and needle_hits_obstacle(domain, seq.needle) is NeedleContact.HITS
    run = run or run_sequence(L0, LD, seq, outer, ("probe",), reference)
    return _limit(run.probe(), reference, rtol, "indicator", strict=not hits)


def probe_cross_terms(L0: DtNMatrix, LD: DtNMatrix, seq: NeedleSequence, outer,
                      stages: Sequence[int] | None = None) -> np.ndarray:
    """Matrix of ``<(Lambda_0 - Lambda_D) v_n, v_m>`` over independent stages."""
    stages = list(range(1, seq.n_stages + 1)) if stages is None else list(stages)
    T = [seq.trace(n, outer, L0.mass) for n in stages]
    return np.array([[gap_pair(L0, LD, a, b) for b in T] for a in T])


def sss_indicator_from_data(L0: DtNMatrix, LD: DtNMatrix, seq: NeedleSequence, outer,
                            rtol: float = 0.01, run: SequenceRun | None = None) -> SequenceLimit:
    """``w_x(x) = -lim <(Lambda_0 - Lambda_D) v_n, G_n>`` with ``G_n = G - v_n``."""
    run = run or run_sequence(L0, LD, seq, outer, ("singular",))
    return _limit(run.singular(), None, rtol, "singular-sources", strict=True)


def w1_from_data(L0: DtNMatrix, LD: DtNMatrix, seq: NeedleSequence, outer, I1: float | None = None,
                 rtol: float = 0.01, run: SequenceRun | None = None) -> SequenceLimit:
    """``w1_x(x) = I1(x) + lim <(Lambda_0 - Lambda_D) v_n, G(. - x)>``."""
    run = run or run_sequence(L0, LD, seq, outer, ("probe",))
    I1 = I1_from_data(LD, run.x, outer) if I1 is None else I1
    return _limit(I1 + np.asarray(run.c), None, rtol, "auxiliary", strict=True)


def star_indicator_from_data(L0: DtNMatrix, LD: DtNMatrix, seq: NeedleSequence, outer,
                             reference: float | None = None, rtol: float = 0.01,
                             run: SequenceRun | None = None, strict: bool = True) -> SequenceLimit:
    """Limit of ``<(Lambda_0 - Lambda_D) G_n, G_n>`` (the corrected sequence)."""
    run = run or run_sequence(L0, LD, seq, outer, ("star",), reference)
    return _limit(run.star(), reference, rtol, "corrected", strict=strict)


# ----------------------------------------------------------------------------
# records


@dataclass
class IndicatorRecord:
    """Every indicator at one probe point, with identity residuals.

    Data-side fields are NaN when no needle sequence was run.  Residuals
    are relative to the natural scale of each identity (see
    :func:`third_indicator`).
    """

    x: np.ndarray
    I_direct: float = math.nan
    I_from_data: float = math.nan
    w_xx_direct: float = math.nan
    w_xx_from_data: float = math.nan
    I1: float = math.nan
    I1_direct: float = math.nan
    w1_xx: float = math.nan
    w1_xx_from_data: float = math.nan
    W_xx: float = math.nan
    W_energy: float = math.nan
    I_star: float = math.nan
    I_star_from_data: float = math.nan
    w_star_xx: float = math.nan
    gap_gg: float = math.nan
    flux_correction: float = math.nan
    s_n: tuple = ()
    verdict: str = "Direct"
    residuals: dict = field(default_factory=dict)

    def check_invariants(self, tol: float = 0.0) -> None:
        for name in ("I_direct", "I1", "I_star"):
            v = getattr(self, name)
            if np.isfinite(v) and v < -tol:
                raise ProbekitError(f"{name} = {v:.3e} is negative beyond {tol:.1e}")

    def csv_row(self) -> list:
        I = self.I_from_data if np.isfinite(self.I_from_data) else self.I_direct
        vals = [*self.x, I, self.w_xx_direct, self.I1, self.w1_xx, self.W_xx, self.I_star,
                self.residuals.get("natural", math.nan), self.residuals.get("two_way", math.nan),
                self.residuals.get("star", math.nan)]
        return [f"{float(v):.17g}" for v in vals] + [self.verdict]


def third_indicator(system: BemSystem, L0: DtNMatrix | None, LD: DtNMatrix | None, x,
                    seq: NeedleSequence | None = None, run: SequenceRun | None = None,
                    fields: DirectFields | None = None) -> IndicatorRecord:
    """Full record at ``x``: both decompositions of ``W_x(x)`` and the rest.

    Residuals by key:

    * ``natural``: ``|W - w - w1| / |W|``;
    * ``two_way``: ``|W - I - I1| / |W|`` (direct ``I1``; the data value is
      under-resolved by the boundary basis very close to the outer surface);
    * ``cross_difference``: ``|(w - I) - (I1 - w1)| / max(I, I1)``;
    * ``outer_flux``: ``|w - I - F| / I`` with ``F`` the outer flux correction;
    * ``star``: ``|I* - w*| / I*``;
    * ``star_reassembly``: ``|I* - I - 2 (I1 - w1) - gap_gg| / I*``;
    * ``wstar_reassembly``: ``|w* - w - (I1 - w1) - gap_gg| / w*``;
    * ``energy``: ``|W - energy form| / |W|``.

    With a sequence (or a finished ``run``) the data-side values are
    filled in and the identities use them where the identity is stated
    in terms of data; otherwise only direct values are used.
    """
    x = check_probe(system, x)
    f = fields or direct_fields(system, x)
    r = IndicatorRecord(x)
    r.I_direct = probe_indicator_direct(system, x, f)
    r.I1_direct = auxiliary_indicator_direct(system, x, f)
    r.w_xx_direct = float(f.w.evaluate(x)[0])
    r.w1_xx = float(f.w1.evaluate(x)[0])
    r.W_xx = float(f.W.evaluate(x)[0])
    r.W_energy = third_energy_direct(system, x, f)
    r.I_star = star_indicator_direct(system, x, f)
    r.w_star_xx = float(f.wstar.evaluate(x)[0])
    r.flux_correction = _outer_flux_pairing(system, f.w, x)
    if L0 is not None and LD is not None:
        g = source_trace(system.outer, x)
        r.I1 = I1_from_data(LD, x, system.outer, g)
        r.gap_gg = gap_pair(L0, LD, g, g)
        if seq is not None or run is not None:
            run = run or run_sequence(L0, LD, seq, system.outer, ("probe", "singular"), g=g)
            r.s_n = tuple(run.s)
            lim = limit_verdict(run.probe())
            r.I_from_data = lim.value
            r.w_xx_from_data = float(run.singular()[-1])
            r.w1_xx_from_data = r.I1 + float(run.c[-1])
            r.I_star_from_data = float(run.star()[-1])
            r.verdict = lim.verdict.value
    else:
        r.I1 = r.I1_direct
        r.gap_gg = 0.0 if system.obstacle is None else math.nan
    I = r.I_from_data if np.isfinite(r.I_from_data) else r.I_direct
    w1 = r.w1_xx_from_data if np.isfinite(r.w1_xx_from_data) else r.w1_xx
    W = r.W_xx
    res = r.residuals
    res["natural"] = _rel(W, r.w_xx_direct + r.w1_xx, W)
    res["two_way"] = _rel(W, r.I_direct + r.I1_direct, W)
    res["cross_difference"] = _rel(r.w_xx_direct - r.I_direct, r.I1_direct - r.w1_xx,
                       max(r.I_direct, r.I1_direct))
    res["outer_flux"] = _rel(r.w_xx_direct - r.I_direct, r.flux_correction, r.I_direct or 1.0)
    res["star"] = _rel(r.I_star, r.w_star_xx, r.I_star or 1.0)
    if np.isfinite(r.gap_gg):
        res["star_reassembly"] = _rel(r.I_star, I + 2.0 * (r.I1 - w1) + r.gap_gg, r.I_star or 1.0)
        res["wstar_reassembly"] = _rel(r.w_star_xx, r.w_xx_direct + (r.I1 - r.w1_xx) + r.gap_gg,
                           r.w_star_xx or 1.0)
    res["energy"] = _rel(W, r.W_energy, W)
    return r


def star_indicator(system: BemSystem, L0: DtNMatrix, LD: DtNMatrix, seq: NeedleSequence, x,
                   run: SequenceRun | None = None) -> tuple[float, float, dict]:
    """``(I*, w*_xx, residuals)`` with ``I*`` from the corrected sequence.

    Residual keys: ``star_data`` (data limit against the direct energy), ``star``
    (``I*`` against ``w*_xx``), ``star_reassembly`` and ``wstar_reassembly`` (reassemblies).
    """
    x = check_probe(system, x)
    run = run or run_sequence(L0, LD, seq, system.outer, ("star", "probe"))
    lim = star_indicator_from_data(L0, LD, seq, system.outer, run=run, strict=False)
    rec = third_indicator(system, L0, LD, x, run=run)
    res = {
        "star_data": _rel(lim.value, rec.I_star, rec.I_star or 1.0),
        "star": _rel(lim.value, rec.w_star_xx, lim.value or 1.0),
        "star_reassembly": rec.residuals.get("star_reassembly", math.nan),
        "wstar_reassembly": rec.residuals.get("wstar_reassembly", math.nan),
    }
    return lim.value, rec.w_star_xx, res


# ----------------------------------------------------------------------------
# lifted indicators


@dataclass
class LiftedIndicatorSample:
    x: np.ndarray
    y: np.ndarray
    I_xy: float
    I_yx: float
    I1_xy: float
    I1_yx: float
    w_x_y: float
    w_y_x: float
    w1_x_y: float
    w1_y_x: float
    W_x_y: float
    W_y_x: float
    I_xy_from_data: float = math.nan
    residuals: dict = field(default_factory=dict)


def lifted_I_direct(system: BemSystem, x, y, w_x: HarmonicSolution | None = None,
                    samples=None) -> float:
    """``I(x, y) = int_dD d_nu G(. - y) w_x dS + int_D grad G_x . grad G_y``."""
    if system.obstacle is None:
        return 0.0
    w_x = w_x or reflected_solution(system, x)
    if samples is None:
        samples = surface_samples(system.obstacle, np.vstack([x, y]))
    s = samples
    dnu = np.einsum("ni,ni->n", grad_G(s.points - y), s.normals)
    return float(np.sum(s.weights * dnu * w_x.dirichlet_at("obstacle", s))) \
        + energy_integral_obstacle(x, y, system.obstacle, samples=s)


def lifted_I1_direct(system: BemSystem, x, y, w1_x: HarmonicSolution | None = None,
                     samples=None) -> float:
    """``I1(x, y) = int_dOmega d_n w1_x G(. - y) dS + exterior energy of (G_x, G_y)``."""
    w1_x = w1_x or auxiliary_solution(system, x)
    if samples is None:
        samples = surface_samples(system.outer, np.vstack([x, y]))
    s = samples
    flux = float(np.sum(s.weights * w1_x.neumann_at("outer", s) * G(s.points - y)))
    return flux + energy_integral_exterior(x, y, system.outer, samples=s)


def lifted_indicators(system: BemSystem, L0: DtNMatrix | None, LD: DtNMatrix | None,
                      seq_x: NeedleSequence | None, seq_y: NeedleSequence | None,
                      x, y) -> LiftedIndicatorSample:
    """Lifted indicators at ``(x, y)`` with their symmetry and decomposition residuals.

    Residual keys: ``sym_I``, ``sym_I1`` (swap symmetry), ``I1_data`` (data
    ``I1(x, y)`` against direct), ``inner`` (inner decomposition), ``twisted``
    and ``twisted_swap`` (twisted decompositions) and, when both sequences are
    given, ``I_data``, ``w_data``, ``w1_data`` and ``W_data``.
    """
    x = check_probe(system, x)
    y = check_probe(system, y)
    fx, fy = direct_fields(system, x), direct_fields(system, y)
    smp_d = surface_samples(system.obstacle, np.vstack([x, y])) if system.obstacle else None
    smp_o = surface_samples(system.outer, np.vstack([x, y]))
    out = LiftedIndicatorSample(
        x, y,
        lifted_I_direct(system, x, y, fx.w, smp_d), lifted_I_direct(system, y, x, fy.w, smp_d),
        lifted_I1_direct(system, x, y, fx.w1, smp_o), lifted_I1_direct(system, y, x, fy.w1, smp_o),
        float(fx.w.evaluate(y)[0]), float(fy.w.evaluate(x)[0]),
        float(fx.w1.evaluate(y)[0]), float(fy.w1.evaluate(x)[0]),
        float(fx.W.evaluate(y)[0]), float(fy.W.evaluate(x)[0]),
    )
    res = out.residuals
    Ixy, I1xy = 0.5 * (out.I_xy + out.I_yx), 0.5 * (out.I1_xy + out.I1_yx)
    scale = abs(Ixy) + abs(I1xy)
    res["sym_I"] = _rel(out.I_xy, out.I_yx, scale)
    res["sym_I1"] = _rel(out.I1_xy, out.I1_yx, scale)
    res["inner"] = _rel(0.5 * (out.W_x_y + out.W_y_x), Ixy + I1xy, scale)
    res["twisted"] = _rel(out.w1_x_y + out.w_y_x, Ixy + I1xy, scale)
    res["twisted_swap"] = _rel(out.w1_y_x + out.w_x_y, Ixy + I1xy, scale)
    if LD is not None:
        gx, gy = source_trace(system.outer, x), source_trace(system.outer, y)
        res["I1_data"] = _rel(lifted_I1_from_data(LD, x, y, system.outer, gx, gy), I1xy, scale)
        if seq_x is not None and seq_y is not None:
            Ixy_d, cx, cy = _cross_run(L0, LD, seq_x, seq_y, system.outer, gx, gy)
            out.I_xy_from_data = Ixy_d
            res["I_data"] = _rel(Ixy_d, Ixy, scale)
            res["w_data"] = _rel(out.w_x_y, Ixy_d - cx, scale)
            res["w1_data"] = _rel(out.w1_x_y, I1xy + cy, scale)
            res["W_data"] = _rel(out.W_x_y, Ixy_d + I1xy + cy - cx, scale)
    return out


def _cross_run(L0, LD, seq_x, seq_y, outer, gx, gy, rtol: float = 0.01,
               min_stages: int = MIN_STAGES):
    """Staged ``<gap v_n(x), v_n(y)>`` with the two ``G``-pairings."""
    vals, cxs, cys = [], [], []
    n_max = min(seq_x.n_stages, seq_y.n_stages)
    for n in range(1, n_max + 1):
        tx = seq_x.trace(n, outer, L0.mass)
        ty = seq_y.trace(n, outer, L0.mass)
        vals.append(gap_pair(L0, LD, tx, ty))
        cxs.append(gap_pair(L0, LD, tx, gy))
        cys.append(gap_pair(L0, LD, ty, gx))
        if n >= min_stages and limit_verdict(vals, None, rtol).verdict is Verdict.CONVERGED:
            break
    return vals[-1], cxs[-1], cys[-1]


def discrete_laplacian(f: Callable[[np.ndarray], float], y, h: float) -> float:
    """Seven-point Laplacian of a scalar function at ``y``."""
    y = np.asarray(y, dtype=float)
    acc = -6.0 * f(y)
    for e in np.eye(3):
        acc += f(y + h * e) + f(y - h * e)
    return acc / h**2


def harmonicity_ratios(system: BemSystem, x, y, h: float = 0.04) -> dict:
    """Seven-point Laplacians in ``y`` of ``I(x, .)`` and ``I1(x, .)``.

    One quadrature rule serves the whole stencil (refined around ``x`` and
    ``y`` only), so each discrete function is an exactly harmonic
    quadrature sum and the stencil error is the pure ``O(h^2)`` truncation.
    Returns the Laplacians at ``h`` and ``h/2`` and their ratio.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    fx = direct_fields(system, x)
    smp_d = surface_samples(system.obstacle, np.vstack([x, y])) if system.obstacle else None
    smp_o = surface_samples(system.outer, np.vstack([x, y]))
    funcs = {
        "I": lambda p: lifted_I_direct(system, x, p, fx.w, smp_d),
        "I1": lambda p: lifted_I1_direct(system, x, p, fx.w1, smp_o),
    }
    out = {}
    for name, f in funcs.items():
        a = discrete_laplacian(f, y, h)
        b = discrete_laplacian(f, y, 0.5 * h)
        out[name] = (a, b, a / b if b != 0 else math.inf)
    return out


# ----------------------------------------------------------------------------
# Side B


@dataclass(frozen=True)
class NeedleTrial:
    needle: Needle
    values: tuple
    verdict: Verdict
    uncorrected: tuple = ()


@dataclass(frozen=True)
class SideBVerdict:
    """Classification of a point by the corrected sequence over needles.

    ``needle`` is the needle that decided the verdict (the converging one,
    or the last one tried).  ``trials`` keeps every needle's stage values;
    their ``uncorrected`` field records the plain ``<gap v_n, v_n>``
    sequence for reference only.
    """

    x: np.ndarray
    needle: Needle | None
    values: tuple
    verdict: Verdict
    trials: tuple = ()

    @property
    def value(self) -> float:
        return self.values[-1] if self.values else math.nan


def axis_needles(domain: Domain, x) -> list[Needle]:
    """Straight needles from ``x`` along the six coordinate directions,
    shortest first."""
    x = np.asarray(x, dtype=float)
    needles = [straight_needle(domain, x, d) for d in AXES]
    return sorted(needles, key=lambda nd: nd.length())


def radial_needles(domain: Domain, x) -> list[Needle]:
    """The straight needle pointing away from the obstacle centroid, then the
    axis set."""
    x = np.asarray(x, dtype=float)
    c = domain.obstacle.vertices.mean(axis=0) if domain.obstacle is not None else np.zeros(3)
    d = x - c
    out = []
    if np.linalg.norm(d) > 1e-12:
        out.append(straight_needle(domain, x, d / np.linalg.norm(d)))
    return out + axis_needles(domain, x)


NEEDLE_STRATEGIES = {"axis-set": axis_needles, "straight-from-nearest-boundary": radial_needles}


def baseline_reference(system: BemSystem, L0: DtNMatrix, LD: DtNMatrix,
                       config: NeedleSequenceConfig | None = None,
                       directions=np.eye(3)) -> float:
    """Median corrected-sequence limit over mid-shell points: the growth reference.

    Each point lies halfway between the two surfaces on the ray from the
    obstacle centroid along one of ``directions`` and is reached by the
    radial needle.
    """
    domain = system.domain
    values = []
    for d in np.atleast_2d(directions):
        x = mid_shell_point(domain, d)
        seq = build_needle_sequence(domain, radial_needles(domain, x)[0], config)
        run = run_sequence(L0, LD, seq, system.outer, ("star",))
        values.append(float(run.star()[-1]))
    return float(np.median(values))


def mid_shell_point(domain: Domain, direction) -> np.ndarray:
    """Midpoint between the two surfaces along a ray from the obstacle centroid."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    c = domain.obstacle.vertices.mean(axis=0) if domain.obstacle is not None else np.zeros(3)
    r_in = _ray_exit(domain.obstacle, c, d) if domain.obstacle is not None else 0.0
    r_out = _ray_exit(domain.outer, c, d)
    return c + 0.5 * (r_in + r_out) * d


def _ray_exit(surface, c: np.ndarray, d: np.ndarray) -> float:
    """Distance from ``c`` to ``surface`` along ``d`` (bisection on the signed distance)."""
    lo, hi = 0.0, 1.0
    while surface.signed_distance((c + hi * d)[None, :])[0] < 0:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if surface.signed_distance((c + mid * d)[None, :])[0] < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sideB_classify(system: BemSystem, L0: DtNMatrix, LD: DtNMatrix, x, reference: float,
                   needle_strategy: str | Callable = "axis-set",
                   config: NeedleSequenceConfig | None = None, rtol: float = 0.01) -> SideBVerdict:
    """Classify ``x`` with the corrected sequence ``<gap G_n, G_n>``.

    Needles are tried in the strategy's order.  The first needle whose
    sequence reaches a plateau gives ``Converged``.  ``BlowsUp`` requires
    every needle's sequence to be confirmed growing past ``10 * reference``;
    anything else is ``Inconclusive``.  Only the DtN data and explicit
    functions are used.
    """
    domain = system.domain
    x = np.asarray(x, dtype=float)
    strategy = NEEDLE_STRATEGIES[needle_strategy] if isinstance(needle_strategy, str) else needle_strategy
    g = source_trace(system.outer, x)
    trials = []
    for needle in strategy(domain, x):
        try:
            seq = build_needle_sequence(domain, needle, config)
        except ProbekitError as exc:
            logger.warning("needle from %s skipped: %s", x, exc)
            continue
        run = run_sequence(L0, LD, seq, system.outer, ("star",), reference, g=g)
        res = limit_verdict(run.star(), reference, rtol)
        trials.append(NeedleTrial(needle, tuple(float(v) for v in run.star()), res.verdict,
                                  tuple(run.s)))
        logger.info("side B at %s, needle length %.3f: %s after %d stages",
                    x, needle.length(), res.verdict.value, run.n_stages)
        if res.verdict is Verdict.CONVERGED:
            return SideBVerdict(x, needle, trials[-1].values, Verdict.CONVERGED, tuple(trials))
    if trials and all(t.verdict is Verdict.BLOWS_UP for t in trials):
        verdict = Verdict.BLOWS_UP
    else:
        verdict = Verdict.INCONCLUSIVE
    last = trials[-1] if trials else None
    return SideBVerdict(x, last.needle if last else None, last.values if last else (),
                        verdict, tuple(trials))


# ----------------------------------------------------------------------------
# invariance under enlarging the outer domain


@dataclass(frozen=True)
class InvarianceReport:
    probes: np.ndarray
    w_inner: np.ndarray
    w_outer: np.ndarray

    @property
    def difference(self) -> np.ndarray:
        return np.abs(self.w_outer - self.w_inner)

    @property
    def sup_difference(self) -> float:
        return float(np.max(self.difference)) if len(self.probes) else 0.0

    @property
    def ratios(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.w_inner != 0, self.difference / np.abs(self.w_inner), 0.0)


def invariance_check(system1: BemSystem, system2: BemSystem, probes) -> InvarianceReport:
    """``w_x(x)`` for two nested outer domains sharing one obstacle.

    Raises
    ------
    NestingViolation
        If the first outer surface is not strictly inside the second, or
        the two systems use different obstacles.
    """
    o1, o2 = system1.outer, system2.outer
    if np.any(o2.signed_distance(o1.vertices) > 0):
        raise NestingViolation("the first outer surface is not contained in the second")
    d1, d2 = system1.obstacle, system2.obstacle
    if (d1 is None) != (d2 is None) or (d1 is not None and d1.fingerprint() != d2.fingerprint()):
        raise NestingViolation("the two domains must share the obstacle")
    P = np.atleast_2d(np.asarray(probes, dtype=float))
    a = np.array([float(reflected_solution(system1, p).evaluate(p)[0]) for p in P])
    b = np.array([float(reflected_solution(system2, p).evaluate(p)[0]) for p in P])
    return InvarianceReport(P, a, b)


# ----------------------------------------------------------------------------
# boundary representations of w_x(y) and w1_x(y)


@dataclass(frozen=True)
class AppendixResiduals:
    resA3: float
    resA7: float
    flux_term: float
    terms: dict


def appendix_residuals(system: BemSystem, x, y) -> AppendixResiduals:
    """Both sides of the boundary representations of ``w_x(y)`` and ``w1_x(y)``.

    ``w_x(y) = F_x(y) + I(x, y)`` with ``F_x(y)`` the outer flux of ``w_x``
    against ``G(. - y)``, and
    ``w1_x(y) = I1(x, y) - int_dOmega G(. - x) d_n w_y dS``.
    The shell energy in ``I(x, y)`` is taken in its swapped form
    (``int_dD d_nu G_x w_y``) so the two sides do not share a reduction.
    Residuals are relative to the sum of the magnitudes of the terms.
    """
    x = check_probe(system, x)
    y = check_probe(system, y)
    fx, fy = direct_fields(system, x), direct_fields(system, y)
    flux_x = _outer_flux_pairing(system, fx.w, y, near=x)
    flux_y = _outer_flux_pairing(system, fy.w, x, near=y)
    I_xy = lifted_I_direct(system, y, x, fy.w)
    I1_xy = lifted_I1_direct(system, x, y, fx.w1)
    w_xy = float(fx.w.evaluate(y)[0])
    w1_xy = float(fx.w1.evaluate(y)[0])
    a3 = abs(w_xy - flux_x - I_xy) / max(abs(w_xy) + abs(flux_x) + abs(I_xy), 1e-300)
    a7 = abs(w1_xy - I1_xy + flux_y) / max(abs(w1_xy) + abs(I1_xy) + abs(flux_y), 1e-300)
    if system.obstacle is None:
        a3 = abs(w_xy - flux_x - I_xy)
    terms = {"w_x_y": w_xy, "flux_w_x": flux_x, "I_xy": I_xy,
             "w1_x_y": w1_xy, "I1_xy": I1_xy, "flux_w_y": flux_y}
    return AppendixResiduals(a3, a7, flux_x, terms)


# ----------------------------------------------------------------------------
# scan and export


@dataclass(frozen=True)
class ScanResult:
    records: list
    skipped: np.ndarray


def scan(system: BemSystem, L0: DtNMatrix | None, LD: DtNMatrix | None, points,
         eps_near: float | None = None, sequences: bool = False,
         reference: float | None = None, needle_strategy: str = "axis-set",
         config: NeedleSequenceConfig | None = None, threads: int = 1) -> ScanResult:
    """One record per admissible point, in input order.

    Points outside the shell or closer than ``eps_near`` to a surface are
    skipped and returned separately.  With ``sequences=True`` each point is
    also classified by :func:`sideB_classify` and the indicator is taken
    from the converging needle.  Failures at a point are recorded in its
    row instead of aborting the scan.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    keep, skipped = [], []
    for p in P:
        try:
            check_probe(system, p, eps_near)
            keep.append(p)
        except NearSurface:
            skipped.append(p)

    def one(p):
        try:
            rec = third_indicator(system, L0, LD, p)
            if sequences and L0 is not None:
                v = sideB_classify(system, L0, LD, p, reference, needle_strategy, config)
                rec.verdict = v.verdict.value
                if v.verdict is Verdict.CONVERGED:
                    rec.I_star_from_data = v.value
            return rec
        except ProbekitError as exc:
            rec = IndicatorRecord(np.asarray(p))
            rec.verdict = f"Error:{type(exc).__name__}"
            return rec

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(one, keep))
    else:
        records = [one(p) for p in keep]
    logger.info("scan: %d records, %d points skipped", len(records), len(skipped))
    return ScanResult(records, np.array(skipped).reshape(-1, 3))


def records_csv(records) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for r in records:
        wr.writerow(r.csv_row())
    return buf.getvalue()


def write_csv(path, records) -> None:
    atomic_write_text(path, records_csv(records))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != CSV_COLUMNS:
        raise ProbekitError(f"{path}: unexpected columns")
    return rows


def vtk_structured_points(values: np.ndarray, origin, spacing, name: str = "I") -> str:
    """Legacy-VTK structured-points text for one scalar column on a box grid.

    ``values`` has shape ``(nx, ny, nz)`` in ``ij`` index order; missing
    points should be NaN.
    """
    v = np.asarray(values, dtype=float)
    nx, ny, nz = v.shape
    flat = v.transpose(2, 1, 0).ravel()  # VTK runs x fastest
    lines = ["# vtk DataFile Version 3.0", f"probekit field {name}", "ASCII",
             "DATASET STRUCTURED_POINTS", f"DIMENSIONS {nx} {ny} {nz}",
             "ORIGIN " + " ".join(f"{c:.17g}" for c in origin),
             "SPACING " + " ".join(f"{c:.17g}" for c in spacing),
             f"POINT_DATA {v.size}", f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
    lines += [f"{t:.17g}" for t in flat]
    return "\n".join(lines) + "\n"
