"""Boundary-element solver for the mixed problems on the shell ``Omega \\ D``.

Every problem is posed as: harmonic in the shell, Dirichlet data on the
outer surface, Neumann data on the obstacle (normal pointing into the
shell).  The solution is an explicit image part plus single-layer
potentials with piecewise-linear densities on both surfaces, collocated at
the mesh vertices.  Jump relations give the traces:

* Neumann trace on the outer surface from inside: ``(1/2 + K') phi``;
* Neumann trace on the obstacle from the shell: ``(K' - 1/2) phi``.

The image part removes the point-source singularity of the data (Kelvin
images for spheres, mirror charges otherwise), so the layer densities only
carry a smooth remainder.  This is what keeps near-surface probes accurate
on desk-scale meshes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from probekit.errors import DomainMismatch, IllConditioned, NearSurfaceEvaluation
from probekit.geometry import (
    Domain,
    PatchSamples,
    TriSurface,
    duffy_rule,
    quadratic_shapes,
    subdivided_rule,
    triangle_rule,
)
from probekit.potential import (
    FOUR_PI,
    G,
    ImageSet,
    PointCharge,
    dirichlet_sphere_image,
    grad_G,
    neumann_sphere_image,
    refinement_levels,
    sample_refined,
)

logger = logging.getLogger(__name__)

DEFAULT_TAU_BVP = 1e-6
NEAR_FRACTION = 0.2
MAX_CONDITION = 1e12


# ----------------------------------------------------------------------------
# operator assembly


DENSITY_ORDER = 2


def _basis(surface: TriSurface, order: int):
    """Element connectivity, local shape function and column count."""
    if order == 1:
        return surface.triangles, (lambda bary: bary), surface.n_vertices
    conn = surface.quadratic_connectivity()
    return conn, quadratic_shapes, surface.butterfly_operator().shape[0]


def _hat_scatter(surface: TriSurface, s: PatchSamples, order: int = 1) -> sp.csr_matrix:
    """Sparse map from element-node densities to ``weight * density`` at samples."""
    conn, shapes, ncol = _basis(surface, order)
    k = conn.shape[1]
    rows = np.repeat(np.arange(len(s.weights)), k)
    cols = conn[s.tri].ravel()
    vals = (shapes(s.hats) * s.weights[:, None]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(s.weights), ncol))


def _kernels(targets: np.ndarray, tnormals: np.ndarray, pts: np.ndarray):
    d = targets[:, None, :] - pts[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", d, d))
    inv = 1.0 / (FOUR_PI * r)
    kp = -np.einsum("ijk,ik->ij", d, tnormals) * inv / (r * r)
    return inv, kp


def assemble_layer_operators(targets: np.ndarray, tnormals: np.ndarray, source: TriSurface,
                             target_vertex_of: np.ndarray | None = None,
                             chunk: int = 48, duffy_order: int = 10,
                             order: int = DENSITY_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Single-layer and adjoint double-layer matrices from nodal densities.

    With ``order=2`` the density between vertices is the quadratic
    reconstruction of the vertex values (see ``TriSurface.butterfly_operator``);
    the returned matrices still act on vertex values.

    Parameters
    ----------
    targets, tnormals : ndarray, shape (m, 3)
        Collocation points and the normals used for ``K'``.
    source : TriSurface
        Surface carrying the P1 density.
    target_vertex_of : ndarray of int, optional
        For self-interaction, the source vertex index of each target (or -1).
        Triangles touching that vertex use a Duffy rule at the vertex.

    Returns
    -------
    S, Kp : ndarray, shape (m, nv)
        Principal-value parts only; jump terms are added by the caller.
    """
    m = len(targets)
    xi, eta, w = triangle_rule(source.quad_order)
    base = source.sample(np.arange(source.n_triangles), xi, eta, w, outer=True)
    conn, shapes, ncol = _basis(source, order)
    H = _hat_scatter(source, base, order).tocsc()
    S = np.empty((m, ncol))
    Kp = np.empty((m, ncol))
    for a in range(0, m, chunk):
        b = min(m, a + chunk)
        g, k = _kernels(targets[a:b], tnormals[a:b], base.points)
        S[a:b] = (H.T @ g.T).T
        Kp[a:b] = (H.T @ k.T).T

    # near and singular corrections, grouped by quadrature rule
    nq = len(w)
    tris = source.triangles
    pair_i, pair_t, pair_key = [], [], []
    for i in range(m):
        lev = refinement_levels(source, targets[i:i + 1])
        key = lev.copy()
        if target_vertex_of is not None and target_vertex_of[i] >= 0:
            own_rows, own_cols = np.nonzero(tris == target_vertex_of[i])
            key[own_rows] = -1 - own_cols          # -1, -2, -3: Duffy at corner 0, 1, 2
        near = np.nonzero(key != 0)[0]
        pair_i.append(np.full(len(near), i))
        pair_t.append(near)
        pair_key.append(key[near])
    pair_i = np.concatenate(pair_i)
    pair_t = np.concatenate(pair_t)
    pair_key = np.concatenate(pair_key)

    def accumulate(ii, tt, smp_pts, smp_hw, sign):
        nr = smp_pts.shape[1]
        dd = targets[ii][:, None, :] - smp_pts
        tn = tnormals[ii]
        r = np.sqrt(np.einsum("pqi,pqi->pq", dd, dd))
        ok = r > 0
        rs = np.where(ok, r, 1.0)
        gv = np.where(ok, 1.0 / (FOUR_PI * rs), 0.0)
        kv = np.where(ok, -np.einsum("pqi,pi->pq", dd, tn) * gv / (rs * rs), 0.0)
        rows = np.repeat(ii, conn.shape[1])
        cols = conn[tt].ravel()
        np.add.at(S, (rows, cols), sign * np.einsum("pq,pqa->pa", gv, smp_hw).ravel())
        np.add.at(Kp, (rows, cols), sign * np.einsum("pq,pqa->pa", kv, smp_hw).ravel())

    def rule_samples(tt_unique, rule):
        smp = source.sample(tt_unique, *rule, outer=True)
        nr = len(rule[2])
        pts = smp.points.reshape(len(tt_unique), nr, 3)
        hw = (shapes(smp.hats) * smp.weights[:, None]).reshape(len(tt_unique), nr, -1)
        return pts, hw

    base_pts = base.points.reshape(source.n_triangles, nq, 3)
    base_hw = (shapes(base.hats) * base.weights[:, None]).reshape(source.n_triangles, nq, -1)
    step = 2048
    for a0 in range(0, len(pair_i), step):
        sl = slice(a0, a0 + step)
        accumulate(pair_i[sl], pair_t[sl], base_pts[pair_t[sl]], base_hw[pair_t[sl]], -1.0)
    for key in np.unique(pair_key):
        sel = np.nonzero(pair_key == key)[0]
        if key < 0:
            rule = duffy_rule(duffy_order, int(-key - 1))
        else:
            rule = subdivided_rule(source.quad_order, int(key))
        uniq, inv = np.unique(pair_t[sel], return_inverse=True)
        pts, hw = rule_samples(uniq, rule)
        block = max(1, 400000 // len(rule[2]))
        for a0 in range(0, len(sel), block):
            ss = sel[a0:a0 + block]
            jj = inv[a0:a0 + block]
            accumulate(pair_i[ss], pair_t[ss], pts[jj], hw[jj], 1.0)
    if order == 1:
        return S, Kp
    Q = source.butterfly_operator()
    return np.asarray((Q.T @ S.T).T), np.asarray((Q.T @ Kp.T).T)


def _values_at(surface: TriSurface, nodal: np.ndarray, s: PatchSamples) -> np.ndarray:
    """Vertex values carried to samples with the solver's density basis."""
    if DENSITY_ORDER == 1:
        return surface.interpolate(nodal, s)
    return surface.interpolate_smooth(nodal, s)


def _collocation(surface: TriSurface) -> tuple[np.ndarray, np.ndarray]:
    return surface.vertices, surface.nodal_normals()


# ----------------------------------------------------------------------------
# images


def _mirror(surface: TriSurface, x: np.ndarray) -> np.ndarray | None:
    """Reflection of ``x`` across the nearest surface point (flat mesh)."""
    from probekit.geometry import point_triangle_distance  # local to keep API small

    d = float(point_triangle_distance(x[None, :], surface.vertices[surface.triangles])[0])
    nrm = surface.nodal_normals()
    k = int(np.argmin(np.linalg.norm(surface.vertices - x, axis=1)))
    n = nrm[k]
    side = np.sign((x - surface.vertices[k]) @ n) or 1.0
    return x - 2.0 * side * d * n


def obstacle_image(domain: Domain, x: np.ndarray) -> ImageSet:
    """Explicit part of the obstacle reflection of ``G(. - x)``."""
    obs = domain.obstacle
    if obs is None:
        return ImageSet()
    if obs.shape is not None and obs.shape.is_sphere:
        return neumann_sphere_image(obs.shape.center, obs.shape.axes[0], x)
    xm = _mirror(obs, x)
    if xm is None or not bool(obs.contains(xm[None, :])[0]):
        return ImageSet()
    return ImageSet((PointCharge(xm, 1.0),))


def outer_image(domain: Domain, x: np.ndarray) -> ImageSet:
    """Explicit harmonic function in ``Omega`` approximating ``G(. - x)`` on the boundary."""
    out = domain.outer
    if out.shape is not None and out.shape.is_sphere:
        return dirichlet_sphere_image(out.shape.center, out.shape.axes[0], x)
    xm = _mirror(out, x)
    if xm is None or bool(out.contains(xm[None, :])[0]):
        return ImageSet()
    return ImageSet((PointCharge(xm, 1.0),))


# ----------------------------------------------------------------------------
# the factorized system


@dataclass(frozen=True)
class BoundaryTrace:
    """Nodal P1 coefficients of Dirichlet or Neumann data on one surface."""

    surface: TriSurface
    values: np.ndarray
    role: str = "Dirichlet"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.surface.n_vertices,):
            raise ValueError("trace length must equal the number of surface vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("trace contains non-finite values")
        object.__setattr__(self, "values", v)


class BemSystem:
    """Assembled and factorized block operator for one domain.

    The factorization is computed once and reused for every right-hand side;
    it is not modified afterwards, so a system may be shared by concurrent
    readers.
    """

    def __init__(self, domain: Domain, near_fraction: float = NEAR_FRACTION):
        self.domain = domain
        self.outer = domain.outer
        self.obstacle = domain.obstacle
        no = self.outer.n_vertices
        nd = self.obstacle.n_vertices if self.obstacle is not None else 0
        self.n_outer, self.n_obstacle = no, nd
        self.eps_outer = near_fraction * self.outer.mean_edge
        self.eps_obstacle = near_fraction * self.obstacle.mean_edge if self.obstacle is not None else 0.0

        xo, no_ = _collocation(self.outer)
        own_o = np.arange(no)
        self.S_oo, self.K_oo = assemble_layer_operators(xo, no_, self.outer, own_o)
        if self.obstacle is not None:
            xd, nd_ = _collocation(self.obstacle)
            own_d = np.arange(nd)
            self.S_od, self.K_od = assemble_layer_operators(xo, no_, self.obstacle)
            self.S_do, self.K_do = assemble_layer_operators(xd, nd_, self.outer)
            self.S_dd, self.K_dd = assemble_layer_operators(xd, nd_, self.obstacle, own_d)
            A = np.block([[self.S_oo, self.S_od],
                          [self.K_do, self.K_dd - 0.5 * np.eye(nd)]])
        else:
            A = self.S_oo
        self.block = A
        self.lu = sla.lu_factor(A)
        self.condition = _condition_estimate(A, self.lu)
        if not np.isfinite(self.condition) or self.condition > MAX_CONDITION:
            raise IllConditioned("boundary-element block system", self.condition)
        self.lu_outer = sla.lu_factor(self.S_oo)
        self.neumann_outer_op = np.hstack(
            [0.5 * np.eye(no) + self.K_oo] + ([self.K_od] if nd else []))
        logger.info("assembled BEM system: %d + %d unknowns, condition %.3e", no, nd, self.condition)

    # -- raw solves ----------------------------------------------------------

    def solve_densities(self, dirichlet_outer: np.ndarray, neumann_obstacle: np.ndarray | None):
        rhs = np.asarray(dirichlet_outer, dtype=float)
        if self.n_obstacle:
            g = np.zeros(self.n_obstacle) if neumann_obstacle is None else np.asarray(neumann_obstacle)
            rhs = np.concatenate([rhs, g], axis=0)
        sol = sla.lu_solve(self.lu, rhs)
        return sol[: self.n_outer], sol[self.n_outer:]

    def dtn_matrix(self) -> np.ndarray:
        """Nodal Dirichlet-to-Neumann matrix with the obstacle present."""
        rhs = np.zeros((self.n_outer + self.n_obstacle, self.n_outer))
        rhs[: self.n_outer] = np.eye(self.n_outer)
        X = sla.lu_solve(self.lu, rhs)
        return self.neumann_outer_op @ X

    def dtn_matrix_background(self) -> np.ndarray:
        """Nodal Dirichlet-to-Neumann matrix of the obstacle-free ball."""
        return (0.5 * np.eye(self.n_outer) + self.K_oo) @ sla.lu_solve(self.lu_outer, np.eye(self.n_outer))

    def traces(self, phi_o: np.ndarray, phi_d: np.ndarray):
        """Nodal Dirichlet/Neumann traces of the layer part on both surfaces."""
        dir_o = self.S_oo @ phi_o
        neu_o = (0.5 * np.eye(self.n_outer) + self.K_oo) @ phi_o
        if self.n_obstacle:
            dir_o = dir_o + self.S_od @ phi_d
            neu_o = neu_o + self.K_od @ phi_d
            dir_d = self.S_do @ phi_o + self.S_dd @ phi_d
            neu_d = self.K_do @ phi_o + self.K_dd @ phi_d - 0.5 * phi_d
        else:
            dir_d = neu_d = np.zeros(0)
        return dir_o, neu_o, dir_d, neu_d


def _condition_estimate(A: np.ndarray, lu) -> float:
    anorm = np.linalg.norm(A, 1)
    rcond, info = sla.lapack.dgecon(lu[0], anorm, norm="1")
    return math.inf if rcond == 0 else 1.0 / rcond


# ----------------------------------------------------------------------------
# solutions


@dataclass(frozen=True)
class HarmonicSolution:
    """Image sources plus single-layer potentials; harmonic in the shell.

    Attributes
    ----------
    images : ImageSet
        Explicit part, singular only outside the shell.
    phi_outer, phi_obstacle : ndarray
        Nodal layer densities.
    dirichlet_outer, neumann_outer, dirichlet_obstacle, neumann_obstacle : ndarray
        Nodal traces of the layer part only.  Use :meth:`dirichlet_at` and
        :meth:`neumann_at` for full traces at arbitrary surface samples.
    outer_only : bool
        True for problems posed on all of ``Omega`` (the obstacle ignored).
    """

    system: BemSystem
    images: ImageSet
    phi_outer: np.ndarray
    phi_obstacle: np.ndarray
    dirichlet_outer: np.ndarray
    neumann_outer: np.ndarray
    dirichlet_obstacle: np.ndarray
    neumann_obstacle: np.ndarray
    label: str = ""
    outer_only: bool = False
    source: np.ndarray | None = None

    # -- algebra ---------------------------------------------------------------

    def __add__(self, other: "HarmonicSolution") -> "HarmonicSolution":
        if other.system is not self.system or other.outer_only != self.outer_only:
            raise DomainMismatch("solutions belong to different systems")
        return HarmonicSolution(
            self.system, self.images + other.images,
            self.phi_outer + other.phi_outer, self.phi_obstacle + other.phi_obstacle,
            self.dirichlet_outer + other.dirichlet_outer, self.neumann_outer + other.neumann_outer,
            self.dirichlet_obstacle + other.dirichlet_obstacle,
            self.neumann_obstacle + other.neumann_obstacle,
            f"{self.label}+{other.label}", self.outer_only, self.source)

    def scaled(self, c: float) -> "HarmonicSolution":
        return HarmonicSolution(
            self.system, ImageSet(self.images.sources, self.images.scale * c),
            c * self.phi_outer, c * self.phi_obstacle, c * self.dirichlet_outer,
            c * self.neumann_outer, c * self.dirichlet_obstacle, c * self.neumann_obstacle,
            self.label, self.outer_only, self.source)

    # -- evaluation ------------------------------------------------------------

    def _surfaces(self):
        sysm = self.system
        out = [(sysm.outer, self.phi_outer, sysm.eps_outer)]
        if not self.outer_only and sysm.obstacle is not None:
            out.append((sysm.obstacle, self.phi_obstacle, sysm.eps_obstacle))
        return out

    def check_admissible(self, points: np.ndarray) -> None:
        for surf, _, eps in self._surfaces():
            d = surf.distance(points)
            if np.any(d < eps):
                raise NearSurfaceEvaluation(
                    f"evaluation at distance {float(np.min(d)):.3g} from a surface (limit {eps:.3g})")

    def evaluate(self, points, coherent: bool = False, check: bool = True) -> np.ndarray:
        """Values at interior points.

        ``coherent=True`` uses one quadrature rule for the whole batch, so the
        result is an exactly harmonic function of the evaluation point; use it
        for finite-difference stencils.
        """
        P = np.atleast_2d(np.asarray(points, dtype=float))
        if check:
            self.check_admissible(P)
        val = self.images.value(P) if self.images else np.zeros(len(P))
        for surf, phi, _ in self._surfaces():
            val = val + layer_potential(surf, phi, P, coherent=coherent)
        return val

    def gradient(self, points, coherent: bool = False, check: bool = True) -> np.ndarray:
        P = np.atleast_2d(np.asarray(points, dtype=float))
        if check:
            self.check_admissible(P)
        g = self.images.gradient(P) if self.images else np.zeros_like(P)
        for surf, phi, _ in self._surfaces():
            g = g + layer_potential(surf, phi, P, coherent=coherent, gradient=True)
        return g

    def dirichlet_at(self, where: str, s: PatchSamples) -> np.ndarray:
        surf, nodal = self._pick(where, "dirichlet")
        layer = _values_at(surf, nodal, s)
        return layer + (self.images.value(s.points) if self.images else 0.0)

    def neumann_at(self, where: str, s: PatchSamples) -> np.ndarray:
        """Normal derivative at surface samples (outward normal of that surface)."""
        surf, nodal = self._pick(where, "neumann")
        layer = _values_at(surf, nodal, s)
        if self.images:
            layer = layer + np.einsum("ni,ni->n", self.images.gradient(s.points), s.normals)
        return layer

    def nodal_trace(self, where: str, kind: str) -> np.ndarray:
        surf, nodal = self._pick(where, kind)
        X, N = _collocation(surf)
        if not self.images:
            return nodal.copy()
        if kind == "dirichlet":
            return nodal + self.images.value(X)
        return nodal + np.einsum("ni,ni->n", self.images.gradient(X), N)

    def neumann_obstacle_full(self) -> np.ndarray:
        """Nodal normal derivative on the obstacle of an outer-only solution."""
        sysm = self.system
        Xd, Nd = _collocation(sysm.obstacle)
        val = sysm.K_do @ self.phi_outer
        if self.images:
            val = val + np.einsum("ni,ni->n", self.images.gradient(Xd), Nd)
        return val

    def _pick(self, where: str, kind: str):
        sysm = self.system
        if where == "outer":
            return sysm.outer, (self.dirichlet_outer if kind == "dirichlet" else self.neumann_outer)
        if sysm.obstacle is None:
            raise DomainMismatch("domain has no obstacle")
        return sysm.obstacle, (self.dirichlet_obstacle if kind == "dirichlet" else self.neumann_obstacle)


def layer_potential(surface: TriSurface, phi: np.ndarray, points: np.ndarray,
                    coherent: bool = False, gradient: bool = False) -> np.ndarray:
    """Single-layer potential (or its gradient) of a nodal P1 density.

    Triangles near a target are re-integrated with a subdivided rule.  With
    ``coherent=True`` the subdivision is decided once for the whole batch.
    """
    P = np.atleast_2d(points)
    out = np.zeros((len(P), 3)) if gradient else np.zeros(len(P))
    base = surface.base_samples()
    dens = _values_at(surface, phi, base) * base.weights
    groups = [np.arange(len(P))] if coherent else [np.array([i]) for i in range(len(P))]

    def kernel_sum(tg, pts, q):
        d = tg[:, None, :] - pts[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", d, d))
        if gradient:
            return -np.einsum("ijk,ij->ik", d, q[None, :] / (FOUR_PI * r**3))
        return (q[None, :] / (FOUR_PI * r)).sum(axis=1)

    for grp in groups:
        lev = refinement_levels(surface, P[grp])
        near = np.nonzero(lev > 0)[0]
        keep = lev[base.tri] == 0
        val = kernel_sum(P[grp], base.points[keep], dens[keep])
        if len(near):
            s = sample_refined(surface, lev[near], tri=near)
            val = val + kernel_sum(P[grp], s.points, _values_at(surface, phi, s) * s.weights)
        out[grp] = val
    return out


# ----------------------------------------------------------------------------
# public problem solvers


def _rhs_with_images(system: BemSystem, images: ImageSet, f_outer: np.ndarray,
                     g_obstacle: np.ndarray | None):
    Xo, _ = _collocation(system.outer)
    f = np.asarray(f_outer, dtype=float)
    if images:
        f = f - images.value(Xo)
    g = None
    if system.n_obstacle:
        Xd, Nd = _collocation(system.obstacle)
        g = np.zeros(system.n_obstacle) if g_obstacle is None else np.asarray(g_obstacle, dtype=float)
        if images:
            g = g - np.einsum("ni,ni->n", images.gradient(Xd), Nd)
    return f, g


def _assemble_solution(system: BemSystem, images: ImageSet, phi_o, phi_d, label, source=None):
    d_o, n_o, d_d, n_d = system.traces(phi_o, phi_d)
    return HarmonicSolution(system, images, phi_o, phi_d, d_o, n_o, d_d, n_d, label,
                            False, None if source is None else np.asarray(source, dtype=float))


def solve_mixed(system: BemSystem, dirichlet_on_outer: BoundaryTrace,
                neumann_on_obstacle: BoundaryTrace | None = None,
                images: ImageSet | None = None, label: str = "u") -> HarmonicSolution:
    """Harmonic ``u`` in the shell with ``u = f`` on the outer surface and
    ``d_nu u = g`` on the obstacle.

    ``images`` optionally supplies an explicit harmonic part whose traces
    are subtracted from the data before the layer solve.
    """
    if dirichlet_on_outer.surface is not system.outer:
        raise DomainMismatch("Dirichlet trace lives on a different surface")
    g = None
    if neumann_on_obstacle is not None:
        if neumann_on_obstacle.surface is not system.obstacle:
            raise DomainMismatch("Neumann trace lives on a different surface")
        g = neumann_on_obstacle.values
    images = images or ImageSet()
    f, g = _rhs_with_images(system, images, dirichlet_on_outer.values, g)
    phi_o, phi_d = system.solve_densities(f, g)
    return _assemble_solution(system, images, phi_o, phi_d, label)


def _source_data(system: BemSystem, x: np.ndarray):
    Xo, _ = _collocation(system.outer)
    Go = G(Xo - x)
    if system.n_obstacle:
        Xd, Nd = _collocation(system.obstacle)
        dGd = np.einsum("ni,ni->n", grad_G(Xd - x), Nd)
    else:
        dGd = np.zeros(0)
    return Go, dGd


def _check_source(system: BemSystem, x: np.ndarray, need_obstacle_clear: bool = True) -> None:
    so = float(system.outer.signed_distance(x[None, :])[0])
    if so >= -system.eps_outer:
        raise NearSurfaceEvaluation(f"source {x} is outside or too close to the outer surface")
    if system.obstacle is not None and need_obstacle_clear:
        sd = float(system.obstacle.signed_distance(x[None, :])[0])
        if sd <= system.eps_obstacle:
            raise NearSurfaceEvaluation(f"source {x} is inside or too close to the obstacle")


def reflected_solution(system: BemSystem, x, use_images: bool = True) -> HarmonicSolution:
    """``w_x``: zero on the outer surface, ``d_nu w = -d_nu G(. - x)`` on the obstacle."""
    x = np.asarray(x, dtype=float)
    _check_source(system, x)
    if system.obstacle is None:
        zero_o = np.zeros(system.n_outer)
        return _assemble_solution(system, ImageSet(), zero_o, np.zeros(0), "w", x)
    _, dGd = _source_data(system, x)
    images = obstacle_image(system.domain, x) if use_images else ImageSet()
    f, g = _rhs_with_images(system, images, np.zeros(system.n_outer), -dGd)
    phi_o, phi_d = system.solve_densities(f, g)
    return _assemble_solution(system, images, phi_o, phi_d, "w", x)


def auxiliary_solution(system: BemSystem, x, use_images: bool = True) -> HarmonicSolution:
    """``w1_x``: equals ``G(. - x)`` on the outer surface, zero flux on the obstacle."""
    x = np.asarray(x, dtype=float)
    _check_source(system, x)
    Go, _ = _source_data(system, x)
    images = outer_image(system.domain, x) if use_images else ImageSet()
    f, g = _rhs_with_images(system, images, Go, None)
    phi_o, phi_d = system.solve_densities(f, g)
    return _assemble_solution(system, images, phi_o, phi_d, "w1", x)


def third_solution(system: BemSystem, x, use_images: bool = True) -> HarmonicSolution:
    """``W_x``: Dirichlet data ``G(. - x)`` and obstacle flux ``-d_nu G(. - x)``."""
    x = np.asarray(x, dtype=float)
    _check_source(system, x)
    Go, dGd = _source_data(system, x)
    images = ImageSet()
    if use_images:
        images = outer_image(system.domain, x) + obstacle_image(system.domain, x)
    f, g = _rhs_with_images(system, images, Go, -dGd if system.n_obstacle else None)
    phi_o, phi_d = system.solve_densities(f, g)
    return _assemble_solution(system, images, phi_o, phi_d, "W", x)


def green_regular(system: BemSystem, x, use_images: bool = True) -> HarmonicSolution:
    """``R_x``: harmonic in all of ``Omega`` with ``R = -G(. - x)`` on the boundary.

    The obstacle is ignored; the result is a single-layer potential on the
    outer surface only, valid everywhere inside ``Omega``.
    """
    x = np.asarray(x, dtype=float)
    _check_source(system, x, need_obstacle_clear=False)
    Xo, _ = _collocation(system.outer)
    images = -outer_image(system.domain, x) if use_images else ImageSet()
    f = -G(Xo - x)
    if images:
        f = f - images.value(Xo)
    phi = sla.lu_solve(system.lu_outer, f)
    dir_o = system.S_oo @ phi
    neu_o = (0.5 * np.eye(system.n_outer) + system.K_oo) @ phi
    nd = system.n_obstacle
    if nd:
        Xd, Nd = _collocation(system.obstacle)
        dir_d = system.S_do @ phi
        neu_d = system.K_do @ phi
    else:
        dir_d = neu_d = np.zeros(0)
    return HarmonicSolution(system, images, phi, np.zeros(nd), dir_o, neu_o, dir_d, neu_d,
                            "R", True, x)


def green_omega(system: BemSystem, R: HarmonicSolution, y) -> np.ndarray:
    """``G_Omega(y; x) = G(y - x) + R_x(y)`` for the source of ``R``."""
    P = np.atleast_2d(np.asarray(y, dtype=float))
    return G(P - R.source) + R.evaluate(P)


def response_to(system: BemSystem, R: HarmonicSolution, label: str = "z") -> HarmonicSolution:
    """Shell solution with zero outer data and obstacle flux ``-d_nu`` of a
    solution harmonic across the obstacle (the correction ``z_x`` for ``R``)."""
    if system.obstacle is None:
        return _assemble_solution(system, ImageSet(), np.zeros(system.n_outer), np.zeros(0), label, R.source)
    Xd, Nd = _collocation(system.obstacle)
    flux = R.neumann_obstacle_full()
    f, g = _rhs_with_images(system, ImageSet(), np.zeros(system.n_outer), -flux)
    phi_o, phi_d = system.solve_densities(f, g)
    return _assemble_solution(system, ImageSet(), phi_o, phi_d, label, R.source)


def star_reflected(system: BemSystem, x, use_images: bool = True) -> HarmonicSolution:
    """``w*_x = w_x + z_x``: obstacle flux ``-d_nu G_Omega(. ; x)``, zero outer data."""
    w = reflected_solution(system, x, use_images)
    R = green_regular(system, x, use_images)
    z = response_to(system, R)
    out = w + z
    return replace(out, label="wstar", source=np.asarray(x, dtype=float))
