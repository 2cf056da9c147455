"""Spherical-harmonics reference solutions for concentric spheres.

Geometry: ``Omega = B(0, R0)`` with a Neumann obstacle ``D = B(0, R1)``.
For a source at ``x`` every field of interest is zonal about the axis
``x/|x|``.  A field is stored through its per-degree radial profiles

    u(y) = (1/4pi) * sum_l f_l(|y|) P_l(cos angle(x, y)),
    f_l(r) = A_l (r/R0)^l + B_l (R1/r)^(l+1),

which keeps every coefficient of order one even for large ``l``.  Energy
integrals of products of two zonal fields with different axes collapse to
single Legendre sums through the addition theorem, so lifted quantities
``I(x, y)`` are exact series as well.

All fields follow the sign conventions of the BEM module: the obstacle
normal points from ``D`` into the shell and ``R_x`` is the regular part of
the Dirichlet Green function of the ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from probekit.errors import TailTooLarge

FOUR_PI = 4.0 * np.pi
FIELDS = ("w", "w1", "W", "R", "z", "wstar")


def legendre_table(cosg: float | np.ndarray, L: int) -> np.ndarray:
    """Legendre polynomials ``P_0..P_L`` at ``cosg``; shape ``(L+1,) + cosg.shape``."""
    c = np.asarray(cosg, dtype=float)
    out = np.empty((L + 1,) + c.shape)
    out[0] = 1.0
    if L >= 1:
        out[1] = c
    for l in range(1, L):
        out[l + 1] = ((2 * l + 1) * c * out[l] - l * out[l - 1]) / (l + 1)
    return out


def _unit(v: np.ndarray) -> tuple[np.ndarray, float]:
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        return np.array([0.0, 0.0, 1.0]), 0.0
    return v / n, n


def _cos_between(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


@dataclass(frozen=True)
class ZonalSeries:
    """Zonal harmonic field with normalized two-term radial profiles.

    Parameters
    ----------
    axis : ndarray
        Unit symmetry axis.
    A, B : ndarray
        Coefficients of ``(r/R0)^l`` and ``(R1/r)^(l+1)`` for ``l = 0..L``.
    R0, R1 : float
        Outer and obstacle radii used in the normalization.
    """

    axis: np.ndarray
    A: np.ndarray
    B: np.ndarray
    R0: float
    R1: float

    @property
    def order(self) -> int:
        return len(self.A) - 1

    def profile(self, r: float) -> tuple[np.ndarray, np.ndarray]:
        """Radial profile ``f_l(r)`` and scaled derivative ``r f_l'(r)``."""
        l = np.arange(self.order + 1, dtype=float)
        grow = np.exp(l * math.log(r / self.R0)) if r > 0 else (l == 0).astype(float)
        decay = np.exp((l + 1) * math.log(self.R1 / r)) if self.R1 > 0 else np.zeros_like(l)
        f = self.A * grow + self.B * decay
        rf = l * self.A * grow - (l + 1) * self.B * decay
        return f, rf

    def terms(self, y: np.ndarray) -> np.ndarray:
        """Per-degree contributions to the value at ``y``."""
        yhat, r = _unit(y)
        f, _ = self.profile(r)
        P = legendre_table(_cos_between(self.axis, yhat), self.order)
        return f * P / FOUR_PI

    def value(self, y: np.ndarray) -> float:
        return float(np.sum(self.terms(y)))

    def __add__(self, other: "ZonalSeries") -> "ZonalSeries":
        if not np.allclose(self.axis, other.axis) or self.order != other.order:
            raise ValueError("zonal series must share axis and order")
        return ZonalSeries(self.axis, self.A + other.A, self.B + other.B, self.R0, self.R1)


def tail_bound(terms: np.ndarray) -> float:
    """Geometric estimate of the neglected part of a convergent series.

    The decay ratio is taken as the largest ratio between consecutive
    non-negligible magnitudes among the last few terms.
    """
    mags = np.abs(np.asarray(terms, dtype=float))
    if mags.size < 4:
        return math.inf
    last = mags[-4:]
    scale = max(float(np.max(mags)), np.finfo(float).tiny)
    if float(np.max(last)) <= 1e-300 + 1e-17 * scale:
        return 0.0
    ratios = last[1:] / np.maximum(last[:-1], 1e-300)
    q = float(np.max(ratios))
    if q >= 1.0:
        return math.inf
    return float(np.max(last[-2:])) * q / (1.0 - q)


def choose_order(R0: float, R1: float, rho: float, tol: float = 1e-8,
                 minimum: int = 40, maximum: int = 4000) -> int:
    """Smallest series order meeting ``tol`` for self-values at radius ``rho``."""
    q = max((rho / R0) ** 2, (R1 / rho) ** 2 if R1 > 0 else 0.0)
    if q <= 0.0:
        return minimum
    if q >= 1.0:
        return maximum
    need = int(math.ceil(math.log(tol) / math.log(q))) + 10
    return int(min(max(need, minimum), maximum))


def _solve_modes(t: float, l: np.ndarray, d0: np.ndarray, d1: np.ndarray):
    """Per-degree 2x2 solves.

    Rows: value at ``R0`` equals ``d0``; ``R1`` times the radial derivative
    at ``R1`` equals ``d1``.
    """
    tl = np.exp(l * math.log(t)) if t > 0 else (l == 0).astype(float)
    tl1 = tl * t
    det = -(l + 1) - l * tl * tl1
    A = (-(l + 1) * d0 - tl1 * d1) / det
    B = (d1 - l * tl * d0) / det
    return A, B


def _source_profile(rho: float, r: float, l: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Profile of ``G(. - x)`` at radius ``r`` (times 4pi, per degree)."""
    if r < rho:
        if r == 0.0:
            f = (l == 0) / rho
            return f, l * f
        f = np.exp(l * math.log(r / rho)) / rho
        return f, l * f
    f = np.exp(l * math.log(rho / r)) / r if rho > 0 else (l == 0) / r
    return f, -(l + 1) * f


@dataclass
class ModalSolution:
    """Series solutions of every boundary value problem for one source point.

    Attributes
    ----------
    fields : dict
        ``ZonalSeries`` for ``w`` (reflected), ``w1`` (auxiliary), ``W`` (their
        sum), ``R`` (regular part of the ball Green function), ``z`` (obstacle
        response to ``R``) and ``wstar`` (``w + z``).
    """

    R0: float
    R1: float
    x: np.ndarray
    L: int
    fields: dict = field(default_factory=dict)
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    rho: float = 0.0

    def value(self, name: str, y: np.ndarray, tol: float | None = None) -> float:
        terms = self.fields[name].terms(np.asarray(y, dtype=float))
        if tol is not None:
            _check_tail(terms, tol, f"{name} at {tuple(float(c) for c in np.round(y, 6))}")
        return float(np.sum(terms))

    def green_omega(self, y: np.ndarray) -> float:
        """``G(y - x) + R_x(y)``."""
        d = np.linalg.norm(np.asarray(y, dtype=float) - self.x)
        return 1.0 / (FOUR_PI * d) + self.value("R", y)

    def mode_residuals(self) -> dict:
        """Largest violation of each field's per-degree boundary conditions."""
        l = np.arange(self.L + 1, dtype=float)
        g0, _ = _source_profile(self.rho, self.R0, l)
        _, g1 = _source_profile(self.rho, self.R1, l)
        r0 = self.fields["R"].profile(self.R0)[0]
        r1 = self.fields["R"].profile(self.R1)[1]
        targets = {
            "w": (0.0 * l, -g1),
            "w1": (g0, 0.0 * l),
            "W": (g0, -g1),
            "z": (0.0 * l, -r1),
            "wstar": (0.0 * l, -g1 - r1),
        }
        out = {}
        for name, (d0, d1) in targets.items():
            f0, _ = self.fields[name].profile(self.R0)
            _, f1 = self.fields[name].profile(self.R1)
            out[name] = float(max(np.max(np.abs(f0 - d0)), np.max(np.abs(f1 - d1))))
        out["R"] = float(np.max(np.abs(r0 + g0)))
        return out


def _check_tail(terms: np.ndarray, tol: float, what: str) -> float:
    bound = tail_bound(terms)
    scale = max(abs(float(np.sum(terms))), 1e-300)
    if bound > tol * scale:
        raise TailTooLarge(f"series for {what} not converged at order {len(terms) - 1}", bound)
    return bound


def oracle_solve(R0: float, R1: float, x, L: int | None = 40) -> ModalSolution:
    """Solve all concentric-sphere problems for source ``x`` up to degree ``L``.

    Parameters
    ----------
    R0, R1 : float
        Radii with ``0 <= R1 < |x| < R0``.  ``R1 = 0`` means no obstacle.
    x : array_like
        Source point in the shell.
    L : int or None
        Truncation degree.  ``None`` picks one from :func:`choose_order`.
    """
    x = np.asarray(x, dtype=float)
    axis, rho = _unit(x)
    if not (0.0 <= R1 < rho < R0):
        raise ValueError(f"source radius {rho} must lie strictly between {R1} and {R0}")
    if L is None:
        L = choose_order(R0, R1, rho)
    if L < 1:
        raise ValueError("series order must be at least 1")
    l = np.arange(L + 1, dtype=float)
    t = R1 / R0

    g0, _ = _source_profile(rho, R0, l)   # value of G at R0
    _, g1 = _source_profile(rho, R1, l) if R1 > 0 else (None, np.zeros_like(l))
    RA = -g0                              # R_x profile is RA (r/R0)^l
    r1 = l * RA * (np.exp(l * math.log(t)) if t > 0 else (l == 0))
    zero = np.zeros_like(l)

    def solved(d0, d1):
        if R1 == 0.0:
            return ZonalSeries(axis, d0.copy(), zero.copy(), R0, R1)
        A, B = _solve_modes(t, l, d0, d1)
        return ZonalSeries(axis, A, B, R0, R1)

    fields = {
        "w": solved(zero, -g1),
        "w1": solved(g0, zero),
        "W": solved(g0, -g1),
        "R": ZonalSeries(axis, RA, zero.copy(), R0, R1),
        "z": solved(zero, -r1),
    }
    fields["wstar"] = fields["w"] + fields["z"]
    if R1 == 0.0:
        fields["w"] = ZonalSeries(axis, zero.copy(), zero.copy(), R0, R1)
        fields["z"] = ZonalSeries(axis, zero.copy(), zero.copy(), R0, R1)
        fields["wstar"] = ZonalSeries(axis, zero.copy(), zero.copy(), R0, R1)
    return ModalSolution(R0=R0, R1=R1, x=x, L=L, fields=fields, axis=axis, rho=rho)


# ----------------------------------------------------------------------------
# energy pairings


def _pair_cos(u: ZonalSeries, v: ZonalSeries, L: int) -> np.ndarray:
    return legendre_table(_cos_between(u.axis, v.axis), L)


def shell_energy_terms(u: ZonalSeries, v: ZonalSeries) -> np.ndarray:
    """Per-degree terms of ``int_{shell} grad u . grad v``."""
    L = min(u.order, v.order)
    l = np.arange(L + 1, dtype=float)
    fu0, _ = u.profile(u.R0)
    _, gv0 = v.profile(v.R0)
    fu1, _ = u.profile(u.R1)
    _, gv1 = v.profile(v.R1)
    bracket = u.R0 * fu0[: L + 1] * gv0[: L + 1] - u.R1 * fu1[: L + 1] * gv1[: L + 1]
    return _pair_cos(u, v, L) * bracket / (FOUR_PI * (2 * l + 1))


def _inner_profile(rho: float, R0: float, r: float, l: np.ndarray, green: bool):
    f = np.exp(l * math.log(r / rho)) / rho
    if green:
        f = f - np.exp(l * math.log(rho / R0)) * np.exp(l * math.log(r / R0)) / R0
    return f, l * f


def obstacle_energy_terms(R0: float, R1: float, x, y, L: int, green: bool = False) -> np.ndarray:
    """Per-degree terms of ``int_D grad G(.-x) . grad G(.-y)``.

    With ``green=True`` the ball Green function ``G + R`` replaces ``G``.
    Both points must lie outside ``D``.
    """
    ax, rx = _unit(x)
    ay, ry = _unit(y)
    l = np.arange(L + 1, dtype=float)
    fx, gx = _inner_profile(rx, R0, R1, l, green)
    fy, gy = _inner_profile(ry, R0, R1, l, green)
    P = legendre_table(_cos_between(ax, ay), L)
    return R1 * P * fy * gx / (FOUR_PI * (2 * l + 1))


def exterior_energy_terms(R0: float, x, y, L: int) -> np.ndarray:
    """Per-degree terms of ``int_{|z|>R0} grad G(.-x) . grad G(.-y)``."""
    ax, rx = _unit(x)
    ay, ry = _unit(y)
    l = np.arange(L + 1, dtype=float)
    P = legendre_table(_cos_between(ax, ay), L)
    s = rx * ry / R0**2
    powers = np.exp(l * math.log(s)) if s > 0 else (l == 0).astype(float)
    return (l + 1) * P * powers / (FOUR_PI * (2 * l + 1) * R0)


def _sum(terms: np.ndarray, tol: float | None, what: str) -> float:
    if tol is not None:
        _check_tail(terms, tol, what)
    return float(np.sum(terms))


@dataclass(frozen=True)
class OracleIndicators:
    """Self-values and indicator energies at one source point."""

    I: float
    I1: float
    W_xx: float
    I_star: float
    w_xx: float
    w1_xx: float
    w_star_xx: float
    gap_gg: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def oracle_indicators(sol: ModalSolution, tol: float | None = None) -> OracleIndicators:
    """Every indicator value for the source point of ``sol``.

    ``gap_gg`` is the background-minus-obstacle DtN pairing of the trace of
    ``G(. - x)`` on the outer sphere.  ``tol`` enables tail checks.
    """
    x = sol.x
    F = sol.fields
    L = sol.L
    ext = _sum(exterior_energy_terms(sol.R0, x, x, L), tol, "exterior energy")
    if sol.R1 == 0.0:
        w1 = sol.value("w1", x, tol)
        return OracleIndicators(0.0, _sum(shell_energy_terms(F["w1"], F["w1"]), None, "") + ext,
                                w1, 0.0, 0.0, w1, 0.0, 0.0)
    I = _sum(shell_energy_terms(F["w"], F["w"]), tol, "w energy") + _sum(
        obstacle_energy_terms(sol.R0, sol.R1, x, x, L), tol, "obstacle energy")
    I1 = _sum(shell_energy_terms(F["w1"], F["w1"]), tol, "w1 energy") + ext
    Istar = _sum(shell_energy_terms(F["wstar"], F["wstar"]), tol, "w* energy") + _sum(
        obstacle_energy_terms(sol.R0, sol.R1, x, x, L, green=True), tol, "Green obstacle energy")
    # harmonic extension of the G trace is -R; its obstacle response is -z
    R = F["R"]
    rR, dR = R.profile(sol.R1)
    l = np.arange(L + 1, dtype=float)
    gap_gg = sol.R1 * float(np.sum(rR * dR / (FOUR_PI * (2 * l + 1)))) + float(
        np.sum(shell_energy_terms(F["z"], F["z"])))
    return OracleIndicators(
        I=I, I1=I1, W_xx=sol.value("W", x, tol), I_star=Istar,
        w_xx=sol.value("w", x, tol), w1_xx=sol.value("w1", x, tol),
        w_star_xx=sol.value("wstar", x, tol), gap_gg=gap_gg)


def oracle_lifted(sx: ModalSolution, sy: ModalSolution, tol: float | None = None) -> dict:
    """Lifted indicators and cross values for a pair of source points."""
    if (sx.R0, sx.R1) != (sy.R0, sy.R1):
        raise ValueError("solutions belong to different geometries")
    L = min(sx.L, sy.L)
    Fx, Fy = sx.fields, sy.fields
    out = {
        "I1_xy": float(np.sum(shell_energy_terms(Fx["w1"], Fy["w1"])))
        + _sum(exterior_energy_terms(sx.R0, sx.x, sy.x, L), tol, "exterior energy"),
        "w_x_y": sx.value("w", sy.x, tol),
        "w_y_x": sy.value("w", sx.x, tol),
        "w1_x_y": sx.value("w1", sy.x, tol),
        "w1_y_x": sy.value("w1", sx.x, tol),
        "W_x_y": sx.value("W", sy.x, tol),
        "W_y_x": sy.value("W", sx.x, tol),
    }
    if sx.R1 > 0:
        out["I_xy"] = float(np.sum(shell_energy_terms(Fx["w"], Fy["w"]))) + _sum(
            obstacle_energy_terms(sx.R0, sx.R1, sx.x, sy.x, L), tol, "obstacle energy")
    else:
        out["I_xy"] = 0.0
    return out


def gap_pairing_sources(R0: float, R1: float, poles_a, coef_a, poles_b, coef_b,
                        L: int = 60) -> float:
    """Continuum ``<(Lambda_0 - Lambda_D) u, v>`` for point-source sums.

    ``u = sum_i coef_a[i] G(. - poles_a[i])`` and likewise ``v``.  Every pole
    must lie outside the closed ball ``B(0, R0)`` so both functions are
    harmonic in ``Omega``.  The pairing equals the obstacle energy plus the
    shell energy of the obstacle response, both summed in closed form.
    """
    pa = np.atleast_2d(np.asarray(poles_a, dtype=float))
    pb = np.atleast_2d(np.asarray(poles_b, dtype=float))
    ca = np.atleast_1d(np.asarray(coef_a, dtype=float))
    cb = np.atleast_1d(np.asarray(coef_b, dtype=float))
    ra = np.linalg.norm(pa, axis=1)
    rb = np.linalg.norm(pb, axis=1)
    if np.any(ra <= R0) or np.any(rb <= R0):
        raise ValueError("poles must lie outside the outer sphere")
    if R1 == 0.0:
        return 0.0
    l = np.arange(L + 1, dtype=float)
    t = R1 / R0

    def response(rho):
        _, g1 = _source_profile(rho, R1, l)
        A, B = _solve_modes(t, l, np.zeros_like(l), -g1)
        fA0 = A + B * np.exp((l + 1) * math.log(t))
        fA1 = A * np.exp(l * math.log(t)) + B
        dA0 = l * A - (l + 1) * B * np.exp((l + 1) * math.log(t))
        dA1 = l * A * np.exp(l * math.log(t)) - (l + 1) * B
        fin, gin = _inner_profile(rho, R0, R1, l, False)
        return fA0, dA0, fA1, dA1, fin, gin

    Ra = [response(r) for r in ra]
    Rb = [response(r) for r in rb]
    ua = pa / ra[:, None]
    ub = pb / rb[:, None]
    cos = np.clip(ua @ ub.T, -1.0, 1.0)
    P = legendre_table(cos, L)            # (L+1, na, nb)
    weight = 1.0 / (FOUR_PI * (2 * l + 1))
    total = 0.0
    for i in range(len(ra)):
        fA0, dA0, fA1, dA1, fin_i, gin_i = Ra[i]
        for j in range(len(rb)):
            gB0, dB0, gB1, dB1, fin_j, gin_j = Rb[j]
            modal = R0 * fA0 * dB0 - R1 * (fA1 * dB1 - fin_j * gin_i)
            total += ca[i] * cb[j] * float(np.sum(P[:, i, j] * modal * weight))
    return total
