"""Fundamental solution, image sources, and boundary-reduced energy integrals.

Volume energies are never meshed.  Harmonicity turns each of them into a
surface integral:

* ``int_D grad G(.-x) . grad G(.-y) dz = int_{dD} d_nu G(z-x) G(z-y) dS``
  for ``x, y`` outside ``D`` (``nu`` the outward normal of ``D``);
* ``int_{R^3 \\ Omega} grad G(.-x) . grad G(.-y) dz
  = -int_{dOmega} d_n G(z-x) G(z-y) dS`` for ``x, y`` inside ``Omega``.

Surface integrals with nearly singular integrands are handled by splitting
each curved triangle in parameter space, with the depth chosen from the
distance between the triangle and the nearest singular point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from probekit.errors import NearSurface, SingularPoint
from probekit.geometry import PatchSamples, TriSurface, subdivided_rule, triangle_rule

FOUR_PI = 4.0 * np.pi


def G(y) -> np.ndarray:
    """``1 / (4 pi |y|)`` along the last axis.

    Examples
    --------
    >>> round(float(G([1.0, 0.0, 0.0])), 7)
    0.0795775
    """
    y = np.asarray(y, dtype=float)
    r = np.linalg.norm(y, axis=-1)
    if np.any(r == 0.0):
        raise SingularPoint("fundamental solution evaluated at its source")
    return 1.0 / (FOUR_PI * r)


def grad_G(y) -> np.ndarray:
    """Gradient ``-y / (4 pi |y|^3)``."""
    y = np.asarray(y, dtype=float)
    r = np.linalg.norm(y, axis=-1, keepdims=True)
    if np.any(r == 0.0):
        raise SingularPoint("fundamental solution gradient evaluated at its source")
    return -y / (FOUR_PI * r**3)


def hess_G(y) -> np.ndarray:
    """Hessian ``(3 y y^T / |y|^5 - I / |y|^3) / (4 pi)``, shape ``(..., 3, 3)``."""
    y = np.asarray(y, dtype=float)
    r = np.linalg.norm(y, axis=-1)[..., None, None]
    if np.any(r == 0.0):
        raise SingularPoint("fundamental solution Hessian evaluated at its source")
    return (3.0 * y[..., :, None] * y[..., None, :] / r**5 - np.eye(3) / r**3) / FOUR_PI


# ----------------------------------------------------------------------------
# image sources: explicit harmonic functions with singularities off the shell


@dataclass(frozen=True)
class PointCharge:
    """``q * G(. - position)``."""

    position: np.ndarray
    q: float

    def value(self, y: np.ndarray) -> np.ndarray:
        d = y - self.position
        return self.q / (FOUR_PI * np.linalg.norm(d, axis=-1))

    def gradient(self, y: np.ndarray) -> np.ndarray:
        d = y - self.position
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        return -self.q * d / (FOUR_PI * r**3)


@dataclass(frozen=True)
class LineCharge:
    """Uniform charge ``density`` per unit length on the segment ``start -> end``.

    The potential ``density/(4pi) * int_0^L ds / |y - start - s e|`` has a
    closed form; the branches below avoid cancellation on the segment's axis.
    """

    start: np.ndarray
    end: np.ndarray
    density: float

    def _frame(self, y):
        L = float(np.linalg.norm(self.end - self.start))
        e = (self.end - self.start) / L
        p = y - self.start
        t = p @ e
        u = p - t[..., None] * e
        q2 = np.einsum("...i,...i->...", u, u)
        r0 = np.linalg.norm(p, axis=-1)
        rL = np.linalg.norm(p - L * e, axis=-1)
        return L, e, t, u, q2, r0, rL

    def value(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.density == 0.0:
            return np.zeros(y.shape[:-1])
        L, e, t, u, q2, r0, rL = self._frame(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            beyond = np.log((r0 + t) / (rL + t - L))
            behind = np.log((L - t + rL) / (r0 - t))
            side = np.log((L - t + rL) * (r0 + t) / q2)
        F = np.where(t > L, beyond, np.where(t < 0, behind, side))
        return self.density * F / FOUR_PI

    def gradient(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.density == 0.0:
            return np.zeros(y.shape)
        L, e, t, u, q2, r0, rL = self._frame(y)
        axial = 1.0 / rL - 1.0 / r0
        with np.errstate(divide="ignore", invalid="ignore"):
            c_beyond = 1.0 / (rL * (rL + t - L)) - 1.0 / (r0 * (r0 + t))
            c_behind = 1.0 / (r0 * (r0 - t)) - 1.0 / (rL * (rL + L - t))
            c_side = ((L - t) / rL + t / r0) / q2
        c = np.where(t > L, c_beyond, np.where(t < 0, c_behind, c_side))
        grad_F = -(axial[..., None] * e + c[..., None] * u)
        return self.density * grad_F / FOUR_PI


@dataclass(frozen=True)
class ImageSet:
    """Sum of explicit sources, scaled by ``scale``."""

    sources: tuple = ()
    scale: float = 1.0

    def value(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1])
        for s in self.sources:
            out = out + s.value(y)
        return self.scale * out

    def gradient(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape)
        for s in self.sources:
            out = out + s.gradient(y)
        return self.scale * out

    def __add__(self, other: "ImageSet") -> "ImageSet":
        a = [_scaled(s, self.scale) for s in self.sources]
        b = [_scaled(s, other.scale) for s in other.sources]
        return ImageSet(tuple(a + b), 1.0)

    def __neg__(self) -> "ImageSet":
        return ImageSet(self.sources, -self.scale)

    def __bool__(self) -> bool:
        return bool(self.sources)


def _scaled(src, c: float):
    if c == 1.0:
        return src
    if isinstance(src, PointCharge):
        return PointCharge(src.position, src.q * c)
    return LineCharge(src.start, src.end, src.density * c)


def neumann_sphere_image(center, radius: float, x) -> ImageSet:
    """Exterior reflection of ``G(. - x)`` by a sound-hard sphere.

    Returns ``u`` harmonic outside the sphere, decaying at infinity, with
    ``d_r (G(. - x) + u) = 0`` on the sphere: a Kelvin point charge plus a
    uniform line charge from the center to the Kelvin point.
    """
    c = np.asarray(center, dtype=float)
    x = np.asarray(x, dtype=float)
    d = x - c
    rho = float(np.linalg.norm(d))
    a = float(radius)
    xk = c + (a * a / (rho * rho)) * d
    return ImageSet((PointCharge(xk, a / rho), LineCharge(c, xk, -1.0 / a)))


def dirichlet_sphere_image(center, radius: float, x) -> ImageSet:
    """Harmonic function inside the sphere equal to ``G(. - x)`` on it (Kelvin)."""
    c = np.asarray(center, dtype=float)
    x = np.asarray(x, dtype=float)
    d = x - c
    rho = float(np.linalg.norm(d))
    a = float(radius)
    if rho == 0.0:
        return ImageSet((), 1.0)
    xs = c + (a * a / (rho * rho)) * d
    return ImageSet((PointCharge(xs, a / rho),))


# ----------------------------------------------------------------------------
# near-singular surface quadrature


def refinement_levels(surface: TriSurface, points: np.ndarray, tri: np.ndarray | None = None,
                      max_level: int = 5) -> np.ndarray:
    """Subdivision depth per triangle for integrands singular at ``points``.

    Depth grows by one each time the distance from the triangle to the
    nearest point halves relative to the triangle diameter.
    """
    tri = np.arange(surface.n_triangles) if tri is None else np.asarray(tri)
    v = surface.vertices[surface.triangles[tri]]
    cen = v.mean(axis=1)
    diam = np.max(np.linalg.norm(v - cen[:, None, :], axis=2), axis=1) * 2.0
    pts = np.atleast_2d(points)
    dist = np.full(len(tri), np.inf)
    for p in pts:
        dist = np.minimum(dist, np.linalg.norm(cen - p, axis=1) - 0.5 * diam)
    ratio = np.maximum(dist, 1e-300) / diam
    lev = np.zeros(len(tri), dtype=int)
    for k, thr in enumerate((3.0, 1.5, 0.75, 0.35, 0.15), start=1):
        lev[ratio < thr] = k
    return np.minimum(lev, max_level)


def sample_refined(surface: TriSurface, levels: np.ndarray, n: int = 4,
                   tri: np.ndarray | None = None) -> PatchSamples:
    """Quadrature samples with a per-triangle subdivision depth."""
    tri = np.arange(surface.n_triangles) if tri is None else np.asarray(tri)
    parts = []
    for lev in np.unique(levels):
        sel = tri[levels == lev]
        xi, eta, w = subdivided_rule(n, int(lev)) if lev > 0 else triangle_rule(n)
        parts.append(surface.sample(sel, xi, eta, w, outer=True))
    return PatchSamples(
        np.concatenate([p.tri for p in parts]),
        np.concatenate([p.points for p in parts]),
        np.concatenate([p.normals for p in parts]),
        np.concatenate([p.weights for p in parts]),
        np.concatenate([p.hats for p in parts]),
    )


def surface_samples(surface: TriSurface, singular_points=None, n: int = 4,
                    max_level: int = 5) -> PatchSamples:
    """Samples over the whole surface, refined near ``singular_points``."""
    if singular_points is None or len(np.atleast_2d(singular_points)) == 0:
        levels = np.zeros(surface.n_triangles, dtype=int)
    else:
        levels = refinement_levels(surface, np.atleast_2d(singular_points), max_level=max_level)
    return sample_refined(surface, levels, n)


# ----------------------------------------------------------------------------
# boundary-reduced energies


def _check_clear(surface: TriSurface, pts: np.ndarray, eps_near: float, what: str) -> None:
    if eps_near <= 0:
        return
    d = surface.distance(pts)
    if np.any(d < eps_near):
        raise NearSurface(f"{what}: point at distance {float(np.min(d)):.3g} < {eps_near:.3g}")


def energy_integral_obstacle(x, y, obstacle: TriSurface, eps_near: float = 0.0,
                             samples: PatchSamples | None = None) -> float:
    """``int_D grad G(z-x) . grad G(z-y) dz`` for ``x, y`` outside ``D``.

    Raises
    ------
    NearSurface
        If either point is closer than ``eps_near`` to the obstacle surface.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_clear(obstacle, np.vstack([x, y]), eps_near, "obstacle energy")
    s = samples if samples is not None else surface_samples(obstacle, np.vstack([x, y]))
    dnu = np.einsum("ni,ni->n", grad_G(s.points - x), s.normals)
    return float(np.sum(s.weights * dnu * G(s.points - y)))


def energy_integral_exterior(x, y, outer: TriSurface, eps_near: float = 0.0,
                             samples: PatchSamples | None = None) -> float:
    """``int_{R^3 minus Omega} grad G(z-x) . grad G(z-y) dz`` for ``x, y`` in ``Omega``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_clear(outer, np.vstack([x, y]), eps_near, "exterior energy")
    s = samples if samples is not None else surface_samples(outer, np.vstack([x, y]))
    dn = np.einsum("ni,ni->n", grad_G(s.points - x), s.normals)
    return float(-np.sum(s.weights * dn * G(s.points - y)))
