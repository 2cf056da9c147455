"""Closed surfaces, domains with one obstacle, needles, and quadrature.

A :class:`TriSurface` is a triangle mesh that may also carry the analytic
surface it was sampled from.  When it does, each triangle is treated as the
curved patch obtained by projecting the flat triangle radially onto the
analytic surface, so normals, Jacobians, and quadrature nodes are exact and
only the boundary data is discretized.
"""

from __future__ import annotations

import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from probekit.errors import AmbiguousPoint, InputError, MeshInvariantError, Tangential

logger = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
# reference-triangle quadrature


@lru_cache(maxsize=None)
def triangle_rule(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the unit triangle ``{xi, eta >= 0, xi + eta <= 1}``.

    Uses ``n * n`` points and integrates polynomials of degree ``2n - 1``
    exactly.  Weights sum to 1/2, the reference area.
    """
    g, gw = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (g + 1.0)
    wu = 0.5 * gw
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    xi = U
    eta = V * (1.0 - U)
    w = WU * WV * (1.0 - U)
    for arr in (xi, eta, w):
        arr.setflags(write=False)
    return xi.ravel(), eta.ravel(), w.ravel()


def duffy_rule(n: int, corner: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rule for integrands with a ``1/r`` singularity at one triangle corner.

    The square-to-triangle map collapses an edge onto ``corner`` so its
    Jacobian cancels the singularity.
    """
    g, gw = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (g + 1.0)
    wu = 0.5 * gw
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    # s measures distance from the corner, t runs across the opposite edge
    a = U * (1.0 - V)
    b = U * V
    w = (WU * WV * U).ravel()
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    c = corners[corner]
    e1 = corners[(corner + 1) % 3] - c
    e2 = corners[(corner + 2) % 3] - c
    pts = c + a.ravel()[:, None] * e1 + b.ravel()[:, None] * e2
    return pts[:, 0], pts[:, 1], w


def subdivided_rule(n: int, levels: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Collapsed Gauss rule replicated over ``4**levels`` congruent sub-triangles."""
    xi, eta, w = triangle_rule(n)
    tris = [np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])]
    for _ in range(levels):
        nxt = []
        for t in tris:
            m01, m12, m20 = (t[0] + t[1]) / 2, (t[1] + t[2]) / 2, (t[2] + t[0]) / 2
            nxt += [np.array([t[0], m01, m20]), np.array([m01, t[1], m12]),
                    np.array([m20, m12, t[2]]), np.array([m12, m20, m01])]
        tris = nxt
    P, W = [], []
    for t in tris:
        e1, e2 = t[1] - t[0], t[2] - t[0]
        jac = abs(e1[0] * e2[1] - e1[1] * e2[0])
        P.append(t[0] + xi[:, None] * e1 + eta[:, None] * e2)
        W.append(w * jac)
    P = np.vstack(P)
    return P[:, 0], P[:, 1], np.concatenate(W)


# ----------------------------------------------------------------------------
# analytic surfaces


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid; a sphere when all semi-axes agree."""

    center: tuple
    axes: tuple

    @property
    def is_sphere(self) -> bool:
        a = self.axes
        return a[0] == a[1] == a[2]

    def project(self, q: np.ndarray) -> np.ndarray:
        """Radial projection from the center onto the surface."""
        c = np.asarray(self.center)
        d = q - c
        s = 1.0 / np.sqrt(np.sum((d / np.asarray(self.axes)) ** 2, axis=-1))
        return c + d * s[..., None]

    def project_jacobian(self, q: np.ndarray) -> np.ndarray:
        """Derivative of :meth:`project`; shape ``q.shape + (3,)``."""
        c = np.asarray(self.center)
        Q = 1.0 / np.asarray(self.axes) ** 2
        d = q - c
        s = 1.0 / np.sqrt(np.sum(d * d * Q, axis=-1))
        grad_s = -(s**3)[..., None] * (Q * d)
        eye = np.eye(3)
        return s[..., None, None] * eye + d[..., :, None] * grad_s[..., None, :]

    def signed_distance(self, p: np.ndarray) -> np.ndarray | None:
        """Exact signed distance (positive outside) for spheres, else ``None``."""
        if not self.is_sphere:
            return None
        return np.linalg.norm(np.asarray(p) - np.asarray(self.center), axis=-1) - self.axes[0]

    def outward_normal(self, p: np.ndarray) -> np.ndarray:
        Q = 1.0 / np.asarray(self.axes) ** 2
        g = (np.asarray(p) - np.asarray(self.center)) * Q
        return g / np.linalg.norm(g, axis=-1, keepdims=True)


def Sphere(center, radius: float) -> Ellipsoid:
    r = float(radius)
    return Ellipsoid(tuple(float(c) for c in np.asarray(center, dtype=float)), (r, r, r))


# ----------------------------------------------------------------------------
# surfaces


@dataclass(frozen=True)
class PatchSamples:
    """Points, outward normals, area weights, and hat values for a set of
    parameter-space samples on chosen triangles."""

    tri: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    hats: np.ndarray


@dataclass(eq=False)
class TriSurface:
    """Closed, outward-oriented triangle mesh with optional exact geometry.

    Parameters
    ----------
    vertices : ndarray, shape (nv, 3)
    triangles : ndarray, shape (nt, 3)
        Vertex indices, counter-clockwise seen from outside.
    shape : Ellipsoid, optional
        Analytic surface the vertices lie on.
    quad_order : int
        Points per direction of the collapsed Gauss rule used for the stored
        per-triangle quadrature.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    shape: Ellipsoid | None = None
    quad_order: int = 4
    normals: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)
    quad_points: np.ndarray = field(init=False)
    quad_normals: np.ndarray = field(init=False)
    quad_weights: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        validate_closed(self.vertices, self.triangles)
        xi, eta, w = triangle_rule(self.quad_order)
        s = self.sample(np.arange(self.n_triangles), xi, eta, w, outer=True)
        nq = len(w)
        self._base = s
        self.quad_points = s.points.reshape(self.n_triangles, nq, 3)
        self.quad_normals = s.normals.reshape(self.n_triangles, nq, 3)
        self.quad_weights = s.weights.reshape(self.n_triangles, nq)
        self.areas = self.quad_weights.sum(axis=1)
        v = self.vertices[self.triangles]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        self.normals = n / np.linalg.norm(n, axis=1, keepdims=True)
        for arr in (self.vertices, self.triangles, self.normals, self.areas,
                    self.quad_points, self.quad_normals, self.quad_weights):
            arr.setflags(write=False)
        if self.signed_volume() <= 0:
            raise MeshInvariantError("normals are not outward: enclosed signed volume is not positive")

    # -- basic properties -------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def edge_lengths(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return np.concatenate([np.linalg.norm(v[:, i] - v[:, (i + 1) % 3], axis=1) for i in range(3)])

    @property
    def mean_edge(self) -> float:
        return float(np.mean(self.edge_lengths()))

    @property
    def max_edge(self) -> float:
        return float(np.max(self.edge_lengths()))

    @property
    def tolerance(self) -> float:
        """Distance below which inside/outside is not trusted."""
        if self.shape is not None and self.shape.is_sphere:
            return 1e-9 * self.max_edge
        # sagitta of a chord of the longest edge on the flat mesh
        return max(1e-9, 0.02 * self.max_edge)

    def flat_area(self) -> float:
        v = self.vertices[self.triangles]
        return float(np.sum(np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)) / 2.0)

    def signed_volume(self) -> float:
        """Signed volume enclosed by the flat triangles."""
        v = self.vertices[self.triangles]
        return float(np.sum(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2]))) / 6.0)

    def enclosed_volume(self) -> float:
        """Volume of the curved region via the divergence theorem."""
        return float(np.sum(self.quad_weights * np.einsum("tqi,tqi->tq", self.quad_points,
                                                          self.quad_normals)) / 3.0)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.triangles, dtype="<i8").tobytes())
        return h.hexdigest()[:32]

    # -- parametrization ----------------------------------------------------

    def base_samples(self) -> PatchSamples:
        """The stored per-triangle rule as flat sample arrays (triangle-major)."""
        return self._base

    def sample(self, tri: np.ndarray, xi: np.ndarray, eta: np.ndarray,
               w: np.ndarray | None = None, outer: bool = False) -> PatchSamples:
        """Map reference points on triangles to the surface.

        With ``outer=True`` every triangle in ``tri`` receives the whole rule
        ``(xi, eta, w)``, ordered triangle-major.  Otherwise the arrays are
        broadcast point by point.
        """
        tri = np.asarray(tri)
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        if outer:
            T = np.repeat(tri, len(xi))
            XI = np.tile(xi, len(tri))
            ETA = np.tile(eta, len(tri))
            W = np.tile(w, len(tri)) if w is not None else None
        else:
            T, XI, ETA = np.broadcast_arrays(tri, xi, eta)
            T, XI, ETA = T.ravel(), XI.ravel(), ETA.ravel()
            W = np.broadcast_to(w, T.shape).ravel() if w is not None else None
        v = self.vertices[self.triangles[T]]
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        q = v[:, 0] + XI[:, None] * e1 + ETA[:, None] * e2
        if self.shape is None:
            X = q
            t1, t2 = e1, e2
        else:
            X = self.shape.project(q)
            J = self.shape.project_jacobian(q)
            t1 = np.einsum("nij,nj->ni", J, e1)
            t2 = np.einsum("nij,nj->ni", J, e2)
        cr = np.cross(t1, t2)
        jac = np.linalg.norm(cr, axis=1)
        nrm = cr / jac[:, None]
        hats = np.stack([1.0 - XI - ETA, XI, ETA], axis=1)
        weights = jac * W if W is not None else jac
        return PatchSamples(T, X, nrm, weights, hats)

    def nodal_normals(self) -> np.ndarray:
        """Outward unit normals at vertices (exact when analytic)."""
        if self.shape is not None:
            return self.shape.outward_normal(self.vertices)
        acc = np.zeros_like(self.vertices)
        v = self.vertices[self.triangles]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        for i in range(3):
            np.add.at(acc, self.triangles[:, i], n)
        return acc / np.linalg.norm(acc, axis=1, keepdims=True)

    # -- quadratic reconstruction ---------------------------------------------

    def edge_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique edges ``(ne, 2)`` and per-triangle edge ids ``(nt, 3)``.

        Edge ``k`` of a triangle joins its local vertices ``k`` and ``k+1``.
        """
        if not hasattr(self, "_edges"):
            tri = self.triangles
            local = np.stack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=1)
            und = np.sort(local.reshape(-1, 2), axis=1)
            edges, inv = np.unique(und, axis=0, return_inverse=True)
            self._edges = (edges, inv.reshape(-1, 3))
        return self._edges

    def butterfly_operator(self):
        """Sparse map from vertex values to quadratic-element node values.

        Rows ``0..nv-1`` copy vertex values; row ``nv + e`` predicts the value
        at the midpoint of edge ``e`` with the eight-point butterfly stencil
        (weights 1/2, 1/8, -1/16), which is exact for cubics on regular
        patches and for constants everywhere.
        """
        if hasattr(self, "_butterfly"):
            return self._butterfly

        edges, tedge = self.edge_table()
        tri = self.triangles
        nv, ne = self.n_vertices, len(edges)
        # for each directed edge (a, b) of a triangle: the opposite vertex
        opp = {}
        for t in range(self.n_triangles):
            for k in range(3):
                a, b, c = tri[t, k], tri[t, (k + 1) % 3], tri[t, (k + 2) % 3]
                opp[(a, b)] = c
        rows, cols, vals = list(range(nv)), list(range(nv)), [1.0] * nv
        for e, (a, b) in enumerate(edges):
            c = opp[(a, b)]
            d = opp[(b, a)]
            wings = [opp[(a, c)], opp[(c, b)], opp[(b, d)], opp[(d, a)]]
            for v, wt in [(a, 0.5), (b, 0.5), (c, 0.125), (d, 0.125)] + [(wv, -0.0625) for wv in wings]:
                rows.append(nv + e)
                cols.append(int(v))
                vals.append(wt)
        Q = sp.csr_matrix((vals, (rows, cols)), shape=(nv + ne, nv))
        self._butterfly = Q
        return Q

    def quadratic_connectivity(self) -> np.ndarray:
        """Six node ids per triangle: vertices then edge midpoints (01, 12, 20)."""
        _, tedge = self.edge_table()
        return np.hstack([self.triangles, self.n_vertices + tedge])

    def interpolate_smooth(self, nodal: np.ndarray, samples: PatchSamples) -> np.ndarray:
        """Evaluate the quadratic reconstruction of vertex values at samples."""
        q = self.butterfly_operator() @ nodal
        return np.einsum("na,na->n", q[self.quadratic_connectivity()[samples.tri]],
                         quadratic_shapes(samples.hats))

    def hat_sampling(self, samples: PatchSamples) -> sp.csr_matrix:
        """Sparse ``(n_samples, n_vertices)`` matrix evaluating P1 fields."""
        ns = len(samples.weights)
        rows = np.repeat(np.arange(ns), 3)
        return sp.csr_matrix((samples.hats.ravel(), (rows, self.triangles[samples.tri].ravel())),
                             shape=(ns, self.n_vertices))

    def smooth_sampling(self, samples: PatchSamples) -> sp.csr_matrix:
        """Sparse matrix evaluating the quadratic reconstruction of vertex values."""
        ns = len(samples.weights)
        conn = self.quadratic_connectivity()[samples.tri]
        E = quadratic_shapes(samples.hats)
        Q = self.butterfly_operator()
        A = sp.csr_matrix((E.ravel(), (np.repeat(np.arange(ns), 6), conn.ravel())),
                          shape=(ns, Q.shape[0]))
        return (A @ Q).tocsr()

    # -- linear algebra helpers ------------------------------------------

    def mass_matrix(self) -> np.ndarray:
        """Consistent P1 mass matrix ``M_ij = int phi_i phi_j dS``."""
        n = self.n_vertices
        xi, eta, w = triangle_rule(self.quad_order)
        hats = np.stack([1.0 - xi - eta, xi, eta], axis=1)
        local = np.einsum("tq,qa,qb->tab", self.quad_weights, hats, hats)
        M = np.zeros((n, n))
        for a in range(3):
            for b in range(3):
                np.add.at(M, (self.triangles[:, a], self.triangles[:, b]), local[:, a, b])
        return M

    def load_vector(self, values_at_quad: np.ndarray) -> np.ndarray:
        """``b_i = int f phi_i dS`` from values at the stored quadrature points."""
        xi, eta, _ = triangle_rule(self.quad_order)
        hats = np.stack([1.0 - xi - eta, xi, eta], axis=1)
        local = np.einsum("tq,tq,qa->ta", self.quad_weights, values_at_quad, hats)
        b = np.zeros(self.n_vertices)
        for a in range(3):
            np.add.at(b, self.triangles[:, a], local[:, a])
        return b

    def interpolate(self, nodal: np.ndarray, samples: PatchSamples) -> np.ndarray:
        """Evaluate a P1 nodal field at surface samples."""
        return np.einsum("na,na->n", nodal[self.triangles[samples.tri]], samples.hats)

    # -- distances -----------------------------------------------------------

    def distance(self, p: np.ndarray) -> np.ndarray:
        """Unsigned distance from points to the surface."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if self.shape is not None:
            sd = self.shape.signed_distance(p)
            if sd is not None:
                return np.abs(sd)
        return point_triangle_distance(p, self.vertices[self.triangles])

    def winding_number(self, p: np.ndarray) -> np.ndarray:
        """Generalized winding number of the flat mesh around each point."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        v = self.vertices[self.triangles]
        out = np.empty(len(p))
        for k, x in enumerate(p):
            a, b, c = v[:, 0] - x, v[:, 1] - x, v[:, 2] - x
            la, lb, lc = (np.linalg.norm(t, axis=1) for t in (a, b, c))
            num = np.einsum("ij,ij->i", a, np.cross(b, c))
            den = (la * lb * lc + np.einsum("ij,ij->i", a, b) * lc
                   + np.einsum("ij,ij->i", b, c) * la + np.einsum("ij,ij->i", c, a) * lb)
            out[k] = np.sum(2.0 * np.arctan2(num, den)) / (4.0 * np.pi)
        return out

    def signed_distance(self, p: np.ndarray) -> np.ndarray:
        """Signed distance, negative inside."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if self.shape is not None:
            sd = self.shape.signed_distance(p)
            if sd is not None:
                return sd
        d = self.distance(p)
        inside = self.winding_number(p) > 0.5
        return np.where(inside, -d, d)

    def contains(self, p: np.ndarray) -> np.ndarray:
        return self.signed_distance(p) < 0.0


def quadratic_shapes(bary: np.ndarray) -> np.ndarray:
    """Quadratic Lagrange shape values from barycentric coordinates ``(n, 3)``."""
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=1)


def point_triangle_distance(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Minimum distance from each point to a set of flat triangles.

    Vectorized closest-point computation over Voronoi regions of each
    triangle (Ericson, Real-Time Collision Detection, ch. 5).
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac = b - a, c - a
    out = np.empty(len(p))
    for k, x in enumerate(p):
        ap = x - a
        d1 = np.einsum("ij,ij->i", ab, ap)
        d2 = np.einsum("ij,ij->i", ac, ap)
        bp = x - b
        d3 = np.einsum("ij,ij->i", ab, bp)
        d4 = np.einsum("ij,ij->i", ac, bp)
        cp = x - c
        d5 = np.einsum("ij,ij->i", ab, cp)
        d6 = np.einsum("ij,ij->i", ac, cp)
        va = d3 * d6 - d5 * d4
        vb = d5 * d2 - d1 * d6
        vc = d1 * d4 - d3 * d2
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = 1.0 / (va + vb + vc)
            v = vb * denom
            w = vc * denom
            closest = a + ab * v[:, None] + ac * w[:, None]
            # edge regions
            t_ab = np.clip(d1 / (d1 - d3), 0, 1)
            t_ac = np.clip(d2 / (d2 - d6), 0, 1)
            t_bc = np.clip((d4 - d3) / ((d4 - d3) + (d5 - d6)), 0, 1)
        r_a = (d1 <= 0) & (d2 <= 0)
        r_b = (d3 >= 0) & (d4 <= d3)
        r_c = (d6 >= 0) & (d5 <= d6)
        r_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        r_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        r_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        closest = np.where(r_bc[:, None], b + (c - b) * t_bc[:, None], closest)
        closest = np.where(r_ac[:, None], a + ac * t_ac[:, None], closest)
        closest = np.where(r_ab[:, None], a + ab * t_ab[:, None], closest)
        closest = np.where(r_c[:, None], c, closest)
        closest = np.where(r_b[:, None], b, closest)
        closest = np.where(r_a[:, None], a, closest)
        out[k] = float(np.min(np.linalg.norm(closest - x, axis=1)))
    return out


def validate_closed(vertices: np.ndarray, triangles: np.ndarray) -> None:
    """Raise :class:`MeshInvariantError` unless the mesh is a closed oriented manifold."""
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise MeshInvariantError("vertices must have shape (nv, 3)")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshInvariantError("triangles must have shape (nt, 3)")
    if len(triangles) == 0:
        raise MeshInvariantError("mesh has no triangles")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise MeshInvariantError("triangle index out of range")
    if not np.all(np.isfinite(vertices)):
        raise MeshInvariantError("non-finite vertex coordinate")
    if np.any(triangles[:, 0] == triangles[:, 1]) or np.any(triangles[:, 1] == triangles[:, 2]) \
            or np.any(triangles[:, 0] == triangles[:, 2]):
        raise MeshInvariantError("degenerate triangle with repeated vertex")
    directed = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    keys, counts = np.unique(directed, axis=0, return_counts=True)
    if np.any(counts > 1):
        raise MeshInvariantError("inconsistent orientation: a directed edge appears twice")
    undirected = np.sort(directed, axis=1)
    _, ucounts = np.unique(undirected, axis=0, return_counts=True)
    if np.any(ucounts != 2):
        raise MeshInvariantError("open or non-manifold surface: every edge must be shared by exactly 2 triangles")
    used = np.unique(triangles)
    if len(used) != len(vertices):
        raise MeshInvariantError("mesh has unreferenced vertices")


# ----------------------------------------------------------------------------
# constructors and file I/O


@lru_cache(maxsize=None)
def _icosphere(level: int) -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    V = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    F = list(faces)
    for _ in range(level):
        cache: dict = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = V[i] + V[j]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        nxt = []
        for a, b, c in F:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        F = nxt
    return np.array(V), np.array(F, dtype=np.int64)


def build_ellipsoid_mesh(center, axes, level: int, quad_order: int = 4) -> TriSurface:
    """Icosahedral mesh of an axis-aligned ellipsoid carrying its exact geometry."""
    if level < 0:
        raise ValueError("refinement level must be non-negative")
    axes = tuple(float(a) for a in axes)
    if min(axes) <= 0:
        raise ValueError("semi-axes must be positive")
    V, F = _icosphere(int(level))
    c = np.asarray(center, dtype=float)
    return TriSurface(c + V * np.asarray(axes), F.copy(),
                      shape=Ellipsoid(tuple(c), axes), quad_order=quad_order)


def build_sphere_mesh(center, radius: float, level: int, quad_order: int = 4) -> TriSurface:
    """Icosahedral sphere mesh with ``10 * 4**level + 2`` vertices.

    Examples
    --------
    >>> build_sphere_mesh((0, 0, 0), 1.0, 0).n_vertices
    12
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    return build_ellipsoid_mesh(center, (radius, radius, radius), level, quad_order)


MESH_HEADER = "PROBEKIT-MESH 1"
NEEDLE_HEADER = "PROBEKIT-NEEDLE 1"


def _data_lines(path: Path) -> list[str]:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    return [ln for ln in lines if ln and not ln.startswith("#")]


def read_mesh(path, shape: Ellipsoid | None = None, quad_order: int = 4) -> TriSurface:
    """Load a surface from the line-oriented text mesh format."""
    lines = _data_lines(Path(path))
    if not lines or lines[0] != MESH_HEADER:
        raise InputError(f"{path}: missing '{MESH_HEADER}' header")
    try:
        nv, nt = (int(s) for s in lines[1].split())
        V = np.array([[float(s) for s in ln.split()] for ln in lines[2:2 + nv]])
        F = np.array([[int(s) for s in ln.split()] for ln in lines[2 + nv:2 + nv + nt]], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: malformed mesh body ({exc})") from exc
    if V.shape != (nv, 3) or F.shape != (nt, 3) or len(lines) != 2 + nv + nt:
        raise InputError(f"{path}: counts in header do not match body")
    return TriSurface(V, F, shape=shape, quad_order=quad_order)


def write_mesh(surface: TriSurface, path) -> None:
    rows = [MESH_HEADER, f"{surface.n_vertices} {surface.n_triangles}"]
    rows += [" ".join(f"{c:.17g}" for c in v) for v in surface.vertices]
    rows += [" ".join(str(int(i)) for i in t) for t in surface.triangles]
    atomic_write_text(path, "\n".join(rows) + "\n")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a sibling temporary file and rename over ``path``."""
    import os
    import tempfile

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


# ----------------------------------------------------------------------------
# domains, classification, needles


class Region(Enum):
    EXTERIOR = "Exterior"
    IN_SHELL = "InShell"
    IN_OBSTACLE = "InObstacle"


@dataclass(frozen=True)
class Classification:
    region: Region
    dist_outer: float
    dist_obstacle: float


@dataclass(eq=False)
class Domain:
    """Outer surface with an optional obstacle strictly inside it."""

    outer: TriSurface
    obstacle: TriSurface | None = None
    clearance: float = field(init=False)

    def __post_init__(self):
        if self.obstacle is None:
            self.clearance = math.inf
            return
        sd = self.outer.signed_distance(self.obstacle.vertices)
        if np.any(sd >= 0):
            raise MeshInvariantError("obstacle is not strictly inside the outer surface")
        self.clearance = float(np.min(-sd))

    @property
    def has_obstacle(self) -> bool:
        return self.obstacle is not None

    def fingerprint(self) -> str:
        parts = [self.outer.fingerprint(), self.obstacle.fingerprint() if self.obstacle else "none"]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:32]

    def without_obstacle(self) -> "Domain":
        return Domain(self.outer, None)


def classify_point(domain: Domain, x) -> Classification:
    """Locate ``x`` relative to the domain and report surface distances.

    Raises
    ------
    AmbiguousPoint
        If ``x`` is within mesh tolerance of either surface.
    """
    x = np.asarray(x, dtype=float).reshape(1, 3)
    so = float(domain.outer.signed_distance(x)[0])
    if abs(so) < domain.outer.tolerance:
        raise AmbiguousPoint(f"point {x[0]} lies on the outer surface")
    if domain.obstacle is not None:
        sd = float(domain.obstacle.signed_distance(x)[0])
        if abs(sd) < domain.obstacle.tolerance:
            raise AmbiguousPoint(f"point {x[0]} lies on the obstacle surface")
    else:
        sd = math.inf
    if so > 0:
        region = Region.EXTERIOR
    elif sd < 0:
        region = Region.IN_OBSTACLE
    else:
        region = Region.IN_SHELL
    return Classification(region, abs(so), abs(sd))


@dataclass(frozen=True)
class Needle:
    """Polyline from the outer boundary to an interior tip."""

    points: np.ndarray

    @property
    def tip(self) -> np.ndarray:
        return self.points[-1]

    @property
    def entry(self) -> np.ndarray:
        return self.points[0]

    def segments(self):
        return zip(self.points[:-1], self.points[1:])

    def sample(self, spacing: float) -> np.ndarray:
        pts = [self.points[0]]
        for a, b in self.segments():
            n = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
            s = np.linspace(0.0, 1.0, n + 1)[1:]
            pts.extend(a + s[:, None] * (b - a))
        return np.array(pts)

    def length(self) -> float:
        return float(sum(np.linalg.norm(b - a) for a, b in self.segments()))


def _segments_cross(p: np.ndarray) -> bool:
    segs = list(zip(p[:-1], p[1:]))
    for i in range(len(segs)):
        for j in range(i + 2, len(segs)):
            if _segment_distance(*segs[i], *segs[j]) < 1e-12:
                return True
    return False


def _segment_distance(p1, q1, p2, q2) -> float:
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    c, b = d1 @ r, d1 @ d2
    denom = a * e - b * b
    s = np.clip((b * f - c * e) / denom, 0, 1) if denom > 1e-300 else 0.0
    t = (b * s + f) / e if e > 0 else 0.0
    if t < 0:
        t, s = 0.0, np.clip(-c / a, 0, 1)
    elif t > 1:
        t, s = 1.0, np.clip((b - c) / a, 0, 1)
    return float(np.linalg.norm(p1 + d1 * s - (p2 + d2 * t)))


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    t = float(np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)) if ab @ ab > 0 else 0.0
    return float(np.linalg.norm(p - (a + t * ab)))


def make_needle(domain: Domain, points) -> Needle:
    """Validate a polyline against the domain and wrap it as a :class:`Needle`."""
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3 or len(P) < 2:
        raise InputError("needle needs at least two 3D points")
    entry_gap = float(domain.outer.distance(P[:1])[0])
    if entry_gap > max(domain.outer.tolerance, 1e-3 * domain.outer.mean_edge):
        raise InputError(f"needle must start on the outer surface (off by {entry_gap:.3g})")
    interior = domain.outer.signed_distance(P[1:])
    if np.any(interior >= 0):
        raise InputError("needle vertices after the first must be strictly inside the domain")
    if _segments_cross(P):
        raise InputError("needle polyline intersects itself")
    return Needle(P)


def straight_needle(domain: Domain, tip, direction) -> Needle:
    """Straight needle reaching ``tip`` from the outer surface along ``-direction``.

    The needle starts where the ray ``tip + s * direction`` leaves the outer
    surface; ``direction`` therefore points from the tip toward the entry.
    """
    tip = np.asarray(tip, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    lo, hi = 0.0, 1.0
    while domain.outer.signed_distance(tip + hi * d)[0] < 0:
        hi *= 2.0
        if hi > 1e6:
            raise InputError("ray from tip never leaves the domain")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if domain.outer.signed_distance(tip + mid * d)[0] < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    entry = tip + 0.5 * (lo + hi) * d
    if domain.outer.shape is not None:
        entry = domain.outer.shape.project(entry)
    return Needle(np.array([entry, tip]))


class NeedleContact(Enum):
    AVOIDS = "Avoids"
    HITS = "Hits"


def needle_hits_obstacle(domain: Domain, needle: Needle) -> NeedleContact:
    """Decide whether the needle meets the closed obstacle.

    A needle passing within obstacle tolerance of the surface is reported as
    hitting, with a :class:`Tangential` warning.
    """
    if domain.obstacle is None:
        return NeedleContact.AVOIDS
    obs = domain.obstacle
    if obs.shape is not None and obs.shape.is_sphere:
        c = np.asarray(obs.shape.center)
        r = obs.shape.axes[0]
        dmin = min(_point_segment_distance(c, a, b) for a, b in needle.segments())
        gap = dmin - r
    else:
        pts = needle.sample(0.25 * obs.mean_edge)
        sd = obs.signed_distance(pts)
        gap = float(np.min(sd))
    if gap < 0:
        return NeedleContact.HITS
    if gap < obs.tolerance:
        warnings.warn(Tangential(f"needle grazes the obstacle (gap {gap:.3g})"), stacklevel=2)
        return NeedleContact.HITS
    return NeedleContact.AVOIDS


def read_needle(path, domain: Domain) -> Needle:
    lines = _data_lines(Path(path))
    if not lines or lines[0] != NEEDLE_HEADER:
        raise InputError(f"{path}: missing '{NEEDLE_HEADER}' header")
    try:
        pts = [[float(s) for s in ln.split()] for ln in lines[1:]]
    except ValueError as exc:
        raise InputError(f"{path}: malformed needle point ({exc})") from exc
    return make_needle(domain, pts)


def write_needle(needle: Needle, path) -> None:
    rows = [NEEDLE_HEADER] + [" ".join(f"{c:.17g}" for c in p) for p in needle.points]
    atomic_write_text(path, "\n".join(rows) + "\n")


@dataclass(frozen=True)
class ScanGrid:
    """Probe points with their distances to both surfaces and near flags."""

    points: np.ndarray
    dist_outer: np.ndarray
    dist_obstacle: np.ndarray
    near: np.ndarray


def make_scan_grid(domain: Domain, points, eps_near: float) -> ScanGrid:
    """Keep points strictly inside the outer surface and flag near-surface ones."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    so = domain.outer.signed_distance(P)
    P = P[so < 0]
    do = domain.outer.distance(P)
    dd = domain.obstacle.distance(P) if domain.obstacle is not None else np.full(len(P), np.inf)
    near = (do < eps_near) | (dd < eps_near)
    return ScanGrid(P, do, dd, near)


def box_grid(lo, hi, n: int) -> np.ndarray:
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    G = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in G], axis=1)
