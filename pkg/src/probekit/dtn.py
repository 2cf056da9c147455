"""Discrete Dirichlet-to-Neumann maps on the outer surface and the gap pairing.

A boundary function ``f`` is a vector of vertex values (the nodal
piecewise-linear basis).  Neumann data is represented the same way, and
the duality pairing is ``<g, f> = g^T M f`` with the consistent mass
matrix ``M``.  Column ``j`` of a DtN matrix is the nodal Neumann trace of
the shell solution with Dirichlet data equal to the ``j``-th hat function.

Collocation leaves a small skew part (``M Lambda`` is not exactly
symmetric), concentrated in mesh-scale modes.  The exact map is
self-adjoint, so by default the assembled matrix is replaced by its
``M``-symmetric part ``(Lambda + M^{-1} Lambda^T M) / 2`` restricted to
functions of zero mean (constants are mapped to zero exactly).  This
leaves the quadratic form ``<Lambda f, f>`` of every zero-mean ``f``
unchanged; the raw skew residual is kept on the object for reporting.

``Lambda_D`` is assembled by default as ``Lambda_0`` minus the gap form.
The gap form pairs hat-function data through the scattered field on the
obstacle: the Poisson kernel of the obstacle-free ball is sampled on
``dD`` and the Neumann problem for the obstacle is solved against it.
This keeps the small difference ``Lambda_0 - Lambda_D`` free of the
cancellation error of subtracting two full collocated maps.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from probekit.bvp import BemSystem, BoundaryTrace, outer_image
from probekit.errors import BasisMismatch, FingerprintMismatch, InputError
from probekit.geometry import Domain, PatchSamples, TriSurface, atomic_write_bytes
from probekit.potential import G, grad_G, surface_samples

logger = logging.getLogger(__name__)

WITH_OBSTACLE = "WithObstacle"
BACKGROUND = "Background"
DTN_HEADER = "PROBEKIT-DTN 1"


@dataclass(frozen=True)
class DtNMatrix:
    """Nodal DtN matrix with its mass matrix and provenance.

    Attributes
    ----------
    matrix : ndarray, shape (n, n)
        Maps vertex Dirichlet values to vertex Neumann values.
    mass : ndarray, shape (n, n)
        Consistent P1 mass matrix of the outer surface.
    provenance : str
        ``"WithObstacle"`` or ``"Background"``.
    fingerprint : str
        Fingerprint of the outer mesh the basis lives on.
    raw_asymmetry : float
        ``||Lambda^T M - M Lambda|| / ||M Lambda||`` before symmetrization.
    """

    matrix: np.ndarray
    mass: np.ndarray
    provenance: str
    fingerprint: str
    raw_asymmetry: float = 0.0

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def symmetry_residual(self) -> float:
        MA = self.mass @ self.matrix
        return float(np.linalg.norm(MA - MA.T) / np.linalg.norm(MA))

    def constant_residual(self) -> float:
        return float(np.linalg.norm(self.matrix @ np.ones(self.n)) / np.linalg.norm(self.matrix))

    def pair(self, g, h) -> float:
        """``<Lambda g, h>``."""
        g, h = _vec(g, self), _vec(h, self)
        return float(h @ self.mass @ (self.matrix @ g))


def _vec(t, dtn: DtNMatrix) -> np.ndarray:
    if isinstance(t, BoundaryTrace):
        if t.surface.fingerprint() != dtn.fingerprint:
            raise BasisMismatch("trace lives on a different boundary mesh")
        v = t.values
    else:
        v = np.asarray(t, dtype=float)
    if v.shape != (dtn.n,):
        raise BasisMismatch(f"trace of length {v.shape} against a {dtn.n}-dimensional basis")
    return v


def m_symmetrize(matrix: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """``M``-self-adjoint part ``(A + M^{-1} A^T M) / 2``, constants removed.

    The symmetric part is sandwiched between the ``M``-orthogonal projector
    ``Q = I - 1 1^T M / (1^T M 1)`` so that constants stay in the kernel.
    """
    c = sla.cho_factor(mass)
    S = 0.5 * (matrix + sla.cho_solve(c, matrix.T @ mass))
    Q = _constant_projector(mass)
    return Q @ S @ Q


def _asymmetry(matrix: np.ndarray, mass: np.ndarray) -> float:
    MA = mass @ matrix
    return float(np.linalg.norm(MA - MA.T) / np.linalg.norm(MA))


def _poisson_kernel(system: BemSystem, Y: np.ndarray, so: PatchSamples,
                    smooth: sp.csr_matrix) -> np.ndarray:
    """``d_n G_Omega(z, y)`` at outer samples ``z`` for each column point ``y``.

    ``G_Omega(., y) = G(. - y) - E_y - L_y`` where ``E_y`` is the explicit
    outer image and ``L_y`` a single layer on the outer surface carrying the
    small remainder of the boundary data.  For a spherical outer surface
    ``E_y`` is the Kelvin image and the remainder vanishes.
    """
    Xo, No = system.outer.vertices, system.outer.nodal_normals()
    out = np.einsum("sjk,sk->sj", grad_G(so.points[:, None, :] - Y[None]), so.normals)
    resid = np.empty((len(Xo), len(Y)))
    for j, y in enumerate(Y):
        img = outer_image(system.domain, y)
        resid[:, j] = G(Xo - y) - (img.value(Xo) if img else 0.0)
        if img:
            out[:, j] -= np.einsum("sk,sk->s", img.gradient(so.points), so.normals)
    phi = sla.lu_solve(system.lu_outer, resid)
    layer_flux = (0.5 * phi + system.K_oo @ phi)
    return out - smooth @ layer_flux


def obstacle_gap_form(system: BemSystem, block: int = 64, fd_step: float = 1e-4) -> np.ndarray:
    """Bilinear form ``B`` with ``g^T B h = <(Lambda_0 - Lambda_D) g, h>``.

    The obstacle's effect is computed as a scattered field.  For Dirichlet
    data ``g`` let ``u0`` be its harmonic extension into ``Omega`` and
    ``c`` the shell correction with ``c = 0`` on the outer surface and
    ``d_nu c = -d_nu u0`` on the obstacle.  Green's identity gives

        <(Lambda_0 - Lambda_D) g, h> = int_{dD} (u0_g + c_g) d_nu u0_h dS.

    ``u0`` and ``d_nu u0`` at obstacle nodes come from the Poisson kernel,
    ``u0(y) = -int g d_n G_Omega(., y) dS``, integrated against the P1 data
    (the normal derivative by a central difference in ``y``).  No discrete
    DtN map enters these rows, so traces with large localized peaks, whose
    contributions cancel almost completely inside ``Omega``, are still
    paired accurately.
    """
    outer, ob = system.outer, system.obstacle
    Xd, Nd = ob.vertices, ob.nodal_normals()
    so = surface_samples(outer)
    H = (outer.hat_sampling(so).T @ sp.diags(so.weights)).tocsr()
    smooth = outer.smooth_sampling(so)
    h = fd_step
    nd = len(Xd)
    U = np.empty((nd, outer.n_vertices))
    V = np.empty((nd, outer.n_vertices))
    for lo in range(0, nd, block):
        sl = slice(lo, min(lo + block, nd))
        y, nu = Xd[sl], Nd[sl]
        U[sl] = -(H @ _poisson_kernel(system, y, so, smooth)).T
        dP = _poisson_kernel(system, y + h * nu, so, smooth) - _poisson_kernel(system, y - h * nu, so, smooth)
        V[sl] = -(H @ dP).T / (2.0 * h)
    rhs = np.zeros((system.n_outer + nd, nd))
    rhs[system.n_outer:] = np.eye(nd)
    phi_o, phi_d = system.solve_densities(rhs[: system.n_outer], rhs[system.n_outer:])
    C = system.S_do @ phi_o + system.S_dd @ phi_d
    sd = surface_samples(ob)
    Sq = ob.smooth_sampling(sd)
    Md = (Sq.T @ sp.diags(sd.weights) @ Sq).toarray()
    return (U - C @ V).T @ Md @ V


def _constant_projector(mass: np.ndarray) -> np.ndarray:
    one = np.ones(len(mass))
    m1 = mass @ one
    return np.eye(len(mass)) - np.outer(one, m1) / (one @ m1)


def assemble_dtn_pair(system: BemSystem | Domain, method: str = "scattered",
                      symmetrize: bool = True) -> tuple[DtNMatrix, DtNMatrix]:
    """``(Lambda_0, Lambda_D)`` for one domain from a shared factorization.

    ``method="scattered"`` (default) forms ``Lambda_D = Lambda_0 - M^{-1} B``
    with ``B`` from :func:`obstacle_gap_form`; ``method="coupled"`` reads
    ``Lambda_D`` off the coupled two-surface solve.  Without an obstacle the
    two returned matrices hold identical values.
    """
    if isinstance(system, Domain):
        system = BemSystem(system)
    if method not in ("scattered", "coupled"):
        raise ValueError(f"unknown DtN assembly method {method!r}")
    outer = system.outer
    M = outer.mass_matrix()
    fp = outer.fingerprint()
    raw0 = system.dtn_matrix_background()
    asym0 = _asymmetry(raw0, M)
    A0 = m_symmetrize(raw0, M) if symmetrize else raw0
    L0 = DtNMatrix(A0, M, BACKGROUND, fp, asym0)
    if system.obstacle is None:
        LD = DtNMatrix(A0.copy(), M, WITH_OBSTACLE, fp, asym0)
    elif method == "coupled":
        raw = system.dtn_matrix()
        LD = DtNMatrix(m_symmetrize(raw, M) if symmetrize else raw, M, WITH_OBSTACLE, fp,
                       _asymmetry(raw, M))
    else:
        B = obstacle_gap_form(system)
        skew = float(np.linalg.norm(B - B.T) / np.linalg.norm(B))
        if symmetrize:
            Q = _constant_projector(M)
            B = Q.T @ (0.5 * (B + B.T)) @ Q
        AD = A0 - sla.cho_solve(sla.cho_factor(M), B)
        LD = DtNMatrix(AD, M, WITH_OBSTACLE, fp, max(asym0, skew))
    logger.info("assembled DtN pair (n=%d, %s, raw asymmetry %.2e / %.2e)",
                L0.n, method, L0.raw_asymmetry, LD.raw_asymmetry)
    return L0, LD


def assemble_dtn(system: BemSystem | Domain, background: bool = False,
                 symmetrize: bool = True, method: str = "scattered") -> DtNMatrix:
    """DtN matrix of ``system``'s shell, or of the obstacle-free ``Omega``.

    All ``n`` columns come from one multi-right-hand-side solve against the
    cached factorization.  See :func:`assemble_dtn_pair` for ``method``.
    """
    if isinstance(system, Domain):
        system = BemSystem(system)
    if background or system.obstacle is None:
        M = system.outer.mass_matrix()
        A = system.dtn_matrix_background()
        raw = _asymmetry(A, M)
        prov = BACKGROUND if background else WITH_OBSTACLE
        return DtNMatrix(m_symmetrize(A, M) if symmetrize else A, M, prov,
                         system.outer.fingerprint(), raw)
    return assemble_dtn_pair(system, method, symmetrize)[1]


def _check_pair(L0: DtNMatrix, LD: DtNMatrix) -> None:
    if L0.fingerprint != LD.fingerprint or L0.n != LD.n:
        raise BasisMismatch("DtN matrices live on different boundary bases")


def gap_matrix(L0: DtNMatrix, LD: DtNMatrix) -> np.ndarray:
    """``M (Lambda_0 - Lambda_D)``: the bilinear form of the gap pairing."""
    _check_pair(L0, LD)
    return L0.mass @ (L0.matrix - LD.matrix)


def gap_pair(L0: DtNMatrix, LD: DtNMatrix, g, h) -> float:
    """``<(Lambda_0 - Lambda_D) g, h>``.

    Raises
    ------
    BasisMismatch
        If the matrices or traces live on different bases.
    """
    _check_pair(L0, LD)
    g, h = _vec(g, L0), _vec(h, L0)
    return float(h @ (L0.mass @ ((L0.matrix - LD.matrix) @ g)))


# ----------------------------------------------------------------------------
# boundary traces of explicit functions


def nodal_trace(surface: TriSurface, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Vertex values of ``func``."""
    return np.asarray(func(surface.vertices), dtype=float)


def hat_load(surface: TriSurface, samples: PatchSamples, values: np.ndarray) -> np.ndarray:
    """``b_i = int f phi_i dS`` from values at arbitrary surface samples."""
    b = np.zeros(surface.n_vertices)
    contrib = samples.hats * (samples.weights * values)[:, None]
    for a in range(3):
        np.add.at(b, surface.triangles[samples.tri, a], contrib[:, a])
    return b


def projected_trace(surface: TriSurface, func: Callable[[np.ndarray], np.ndarray],
                    singular_points=None, mass: np.ndarray | None = None) -> np.ndarray:
    """L2 projection of ``func`` onto the nodal basis.

    ``singular_points`` (e.g. a nearby source) refines the load-vector
    quadrature on triangles close to them.
    """
    s = surface_samples(surface, singular_points)
    b = hat_load(surface, s, func(s.points))
    M = surface.mass_matrix() if mass is None else mass
    return sla.cho_solve(sla.cho_factor(M), b)


def source_trace(surface: TriSurface, x, project: bool = True) -> np.ndarray:
    """Trace of ``G(. - x)``, projected (default) or nodal."""
    x = np.asarray(x, dtype=float)
    f = lambda P: G(P - x)  # noqa: E731
    if project:
        return projected_trace(surface, f, x[None, :])
    return nodal_trace(surface, f)


def source_flux_load(surface: TriSurface, x) -> np.ndarray:
    """``int d_n G(. - x) phi_i dS`` for every hat ``phi_i`` (outward normal)."""
    x = np.asarray(x, dtype=float)
    s = surface_samples(surface, x[None, :])
    dn = np.einsum("ni,ni->n", grad_G(s.points - x), s.normals)
    return hat_load(surface, s, dn)


# ----------------------------------------------------------------------------
# fine-to-coarse projection


def prolongation(coarse: TriSurface, fine_points: np.ndarray, candidates: int = 8):
    """Sparse interpolation of coarse nodal fields at ``fine_points``.

    Each point is located in the coarse triangle whose plane projection
    gives the least negative barycentric coordinate.
    """
    import scipy.sparse as sp

    V = coarse.vertices[coarse.triangles]
    cen = V.mean(axis=1)
    rows, cols, vals = [], [], []
    for i, p in enumerate(np.atleast_2d(fine_points)):
        near = np.argsort(np.linalg.norm(cen - p, axis=1))[:candidates]
        best, bary_best = None, None
        for t in near:
            a, b, c = V[t]
            T = np.column_stack([b - a, c - a])
            uv = np.linalg.lstsq(T, p - a, rcond=None)[0]
            bary = np.array([1.0 - uv.sum(), uv[0], uv[1]])
            if best is None or bary.min() > bary_best.min():
                best, bary_best = t, bary
        bary_best = np.clip(bary_best, 0.0, None)
        bary_best /= bary_best.sum()
        for a in range(3):
            rows.append(i)
            cols.append(int(coarse.triangles[best, a]))
            vals.append(bary_best[a])
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(np.atleast_2d(fine_points)), coarse.n_vertices))


def project_dtn(fine: DtNMatrix, fine_surface: TriSurface, coarse_surface: TriSurface) -> DtNMatrix:
    """Galerkin restriction ``M_c^{-1} P^T M_f Lambda_f P`` of a fine-mesh map."""
    if fine_surface.fingerprint() != fine.fingerprint:
        raise BasisMismatch("fine DtN matrix does not belong to the given fine surface")
    P = prolongation(coarse_surface, fine_surface.vertices).toarray()
    Mc = coarse_surface.mass_matrix()
    B = P.T @ fine.mass @ fine.matrix @ P
    A = sla.cho_solve(sla.cho_factor(Mc), B)
    raw = _asymmetry(A, Mc)
    return DtNMatrix(m_symmetrize(A, Mc), Mc, fine.provenance, coarse_surface.fingerprint(), raw)


# ----------------------------------------------------------------------------
# file format


def _format_rows(a: np.ndarray) -> str:
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in a)


def dtn_bytes(dtn: DtNMatrix, binary: bool = False) -> bytes:
    head = (f"{DTN_HEADER}\nfingerprint {dtn.fingerprint}\nn {dtn.n}\n"
            f"encoding {'f64le' if binary else 'text'}\n").encode()
    if binary:
        body = (np.ascontiguousarray(dtn.matrix, dtype="<f8").tobytes()
                + np.ascontiguousarray(dtn.mass, dtype="<f8").tobytes())
    else:
        body = (_format_rows(dtn.matrix) + _format_rows(dtn.mass)).encode()
    return head + body


def write_dtn(path, dtn: DtNMatrix, binary: bool = False) -> None:
    """Write atomically (temporary file and rename)."""
    atomic_write_bytes(Path(path), dtn_bytes(dtn, binary))


def read_dtn(path, expected_fingerprint: str | None = None,
             provenance: str = WITH_OBSTACLE) -> DtNMatrix:
    """Read a DtN file.

    Raises
    ------
    InputError
        Malformed file.
    FingerprintMismatch
        If ``expected_fingerprint`` is given and differs from the file's.
    """
    raw = Path(path).read_bytes()
    buf = io.BytesIO(raw)
    try:
        lines = [buf.readline().decode().strip() for _ in range(4)]
        if lines[0] != DTN_HEADER:
            raise InputError(f"{path}: not a DtN file (header {lines[0]!r})")
        fp = lines[1].split()[1]
        n = int(lines[2].split()[1])
        enc = lines[3].split()[1]
    except (IndexError, ValueError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: malformed DtN header") from exc
    rest = buf.read()
    if enc == "f64le":
        if len(rest) != 16 * n * n:
            raise InputError(f"{path}: expected {16 * n * n} payload bytes, found {len(rest)}")
        vals = np.frombuffer(rest, dtype="<f8").astype(float)
    elif enc == "text":
        try:
            vals = np.array(rest.decode().split(), dtype=float)
        except ValueError as exc:
            raise InputError(f"{path}: non-numeric DtN entry") from exc
        if vals.size != 2 * n * n:
            raise InputError(f"{path}: expected {2 * n * n} values, found {vals.size}")
    else:
        raise InputError(f"{path}: unknown encoding {enc!r}")
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise FingerprintMismatch(f"{path}: mesh fingerprint {fp} does not match geometry {expected_fingerprint}")
    A = vals[: n * n].reshape(n, n)
    M = vals[n * n:].reshape(n, n)
    return DtNMatrix(A, M, provenance, fp, _asymmetry(A, M))
