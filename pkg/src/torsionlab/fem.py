"""P1 finite elements on triangle meshes.

Solvers for the torsion problem, the screened torsion problem, the first
Dirichlet eigenpair and the Green function (by splitting off the
logarithmic singularity), plus consistent recovery of normal derivatives
on the boundary.

All linear systems are restricted to interior vertices and solved with a
sparse LU factorization, cached per mesh.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from matplotlib.tri import LinearTriInterpolator, Triangulation

from .meshing import Mesh

EIG_TOL = 1e-10
EIG_MAXITER = 500
VEC_TOL = 1e-10


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScalarField:
    mesh_id: int
    values: np.ndarray
    kind: str  # torsion | screened | eigenfunction | green_regular_part

    def __post_init__(self):
        self.values.setflags(write=False)


@dataclass(frozen=True)
class EigenSolution:
    lambda1: float
    phi: ScalarField
    iterations: int = 0


@dataclass(frozen=True)
class BoundaryField:
    """Edgewise outward normal derivatives on the boundary edges of a mesh.

    ``values[k]`` is the edge average on ``mesh.boundary_edges[k]``;
    ``nodal`` holds the P1 boundary trace the edge values come from (when
    the recovery produces one).
    """
    mesh_id: int
    values: np.ndarray
    loop_ids: np.ndarray
    lengths: np.ndarray
    nodal: Optional[np.ndarray] = None

    def integral(self, weights=None) -> float:
        w = 1.0 if weights is None else np.asarray(weights)
        return float(np.sum(self.values * w * self.lengths))


@dataclass(frozen=True)
class Source:
    """Right-hand side of the PDE a field satisfies.

    kind is ``"torsion"`` (f = 1), ``"screened"`` (f = 1 - a u),
    ``"eigen"`` (f = lambda u) or ``"harmonic"`` (f = 0).
    """
    kind: str
    coef: float = 0.0

    @classmethod
    def torsion(cls):
        return cls("torsion")

    @classmethod
    def screened(cls, a: float):
        return cls("screened", float(a))

    @classmethod
    def eigen(cls, lam: float):
        return cls("eigen", float(lam))

    @classmethod
    def harmonic(cls):
        return cls("harmonic")


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

class _System:
    def __init__(self, mesh: Mesh):
        V, T = mesh.vertices, mesh.triangles
        x, y = V[T, 0], V[T, 1]
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
        if np.any(area <= 0):
            raise SolverError("mesh has non-positive triangle areas")
        Ke = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4 * area)[:, None, None]
        Me = (area / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))
        rows = np.repeat(T, 3, axis=1).ravel()
        cols = np.tile(T, (1, 3)).ravel()
        n = len(V)
        self.K = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(n, n))
        self.M = sp.csr_matrix((Me.ravel(), (rows, cols)), shape=(n, n))
        self.grad_b, self.grad_c, self.area = b, c, area
        mask = mesh.interior_mask
        self.I = np.flatnonzero(mask)
        self.B = np.flatnonzero(~mask)
        if len(self.I) == 0:
            raise SolverError("mesh too coarse: no interior vertices")
        self.KII = self.K[self.I][:, self.I].tocsc()
        self.MII = self.M[self.I][:, self.I].tocsc()
        self.KIB = self.K[self.I][:, self.B].tocsc()
        self._lu = {}

    def lu(self, a: float = 0.0):
        key = float(a)
        if key not in self._lu:
            A = self.KII if key == 0.0 else (self.KII + key * self.MII).tocsc()
            self._lu[key] = spla.splu(A)
        return self._lu[key]


_cache: "weakref.WeakKeyDictionary[Mesh, _System]" = weakref.WeakKeyDictionary()


def system(mesh: Mesh) -> _System:
    """Assembled stiffness and mass matrices of ``mesh`` (cached)."""
    s = _cache.get(mesh)
    if s is None:
        s = _System(mesh)
        _cache[mesh] = s
    return s


def stiffness(mesh: Mesh) -> sp.csr_matrix:
    return system(mesh).K


def mass(mesh: Mesh) -> sp.csr_matrix:
    return system(mesh).M


def _solve(S: _System, rhs: np.ndarray, a: float = 0.0) -> np.ndarray:
    x = S.lu(a).solve(rhs)
    A = S.KII if a == 0 else S.KII + a * S.MII
    res = np.linalg.norm(A @ x - rhs)
    scale = np.linalg.norm(rhs)
    if not np.isfinite(res) or res > 1e-8 * max(scale, 1e-300):
        raise SolverError(f"linear solve did not converge (residual {res:.3e})")
    return x


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def solve_torsion(mesh: Mesh) -> ScalarField:
    """P1 solution of -Lap u = 1 with u = 0 on the boundary."""
    S = system(mesh)
    u = np.zeros(mesh.n_vertices)
    u[S.I] = _solve(S, (S.M @ np.ones(mesh.n_vertices))[S.I])
    return ScalarField(mesh.mesh_id, u, "torsion")


def solve_screened(mesh: Mesh, a: float) -> ScalarField:
    """P1 solution of -Lap u + a u = 1 with zero boundary values."""
    if a < 0:
        raise ValueError("screening constant must be nonnegative")
    if a == 0:
        f = solve_torsion(mesh)
        return ScalarField(f.mesh_id, f.values.copy(), "screened")
    S = system(mesh)
    u = np.zeros(mesh.n_vertices)
    load = (S.M @ np.ones(mesh.n_vertices))[S.I]
    u[S.I] = _solve(S, load, a)
    return ScalarField(mesh.mesh_id, u, "screened")


def solve_eigenpair(mesh: Mesh, method: str = "inverse", tol: float = EIG_TOL,
                    maxiter: int = EIG_MAXITER) -> EigenSolution:
    """First Dirichlet eigenpair of the (stiffness, mass) pencil.

    ``method="inverse"`` runs inverse power iteration from the all-ones
    vector. ``method="lanczos"`` uses shift-invert ARPACK with the same
    factorization and start vector; it is meant for domains where the first
    two eigenvalues are close (long rectangles).
    """
    S = system(mesh)
    lu = S.lu()
    n = len(S.I)
    x = np.ones(n)
    if method == "inverse":
        # the eigenvalue converges twice as fast as the vector, so iteration
        # continues until the vector has settled too (VEC_TOL in the M-norm)
        lam_old = np.inf
        lam_ok = False
        for it in range(1, maxiter + 1):
            y = lu.solve(S.MII @ x)
            My = S.MII @ y
            lam = float(y @ (S.KII @ y)) / float(y @ My)
            x_new = y / math.sqrt(float(y @ My))
            dx = x_new - x
            x = x_new
            change = abs(lam - lam_old)
            lam_ok = lam_ok or change < tol * abs(lam)
            if lam_ok and math.sqrt(float(dx @ (S.MII @ dx))) < VEC_TOL:
                break
            lam_old = lam
        else:
            if not lam_ok:
                raise SolverError(f"inverse iteration hit the cap of {maxiter} iterations "
                                  f"(last lambda {lam:.12g}, relative change {change / lam:.3e})")
    elif method == "lanczos":
        op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
        vals, vecs = spla.eigsh(S.KII, k=1, M=S.MII, sigma=0.0, which="LM",
                                OPinv=op, v0=x, tol=1e-14)
        x = vecs[:, 0]
        lam = float(vals[0])
        it = 0
    else:
        raise ValueError(f"unknown eigen method {method!r}")
    x = x / math.sqrt(float(x @ (S.MII @ x)))
    if x.sum() < 0:
        x = -x
    lam = float(x @ (S.KII @ x))
    phi = np.zeros(mesh.n_vertices)
    phi[S.I] = x
    return EigenSolution(lam, ScalarField(mesh.mesh_id, phi, "eigenfunction"), it)


def singular_part(points, x0) -> np.ndarray:
    """-(1/2 pi) log|y - x0|, the free-space Green function."""
    d = np.atleast_2d(points) - np.asarray(x0, dtype=float)
    return -np.log(np.hypot(d[:, 0], d[:, 1])) / (2 * math.pi)


def _boundary_distance(mesh: Mesh, pts) -> np.ndarray:
    pts = np.atleast_2d(pts)
    a = mesh.vertices[mesh.boundary_edges[:, 0]]
    b = mesh.vertices[mesh.boundary_edges[:, 1]]
    ab = b - a
    t = np.clip(((pts[:, None] - a) * ab).sum(-1) / (ab * ab).sum(-1), 0, 1)
    d = pts[:, None] - a - t[..., None] * ab
    return np.hypot(d[..., 0], d[..., 1]).min(axis=1)


class _Interp:
    def __init__(self, mesh: Mesh):
        self.tri = Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)
        self.finder = self.tri.get_trifinder()

    def __call__(self, values, pts):
        pts = np.atleast_2d(pts)
        f = LinearTriInterpolator(self.tri, values, trifinder=self.finder)
        out = f(pts[:, 0], pts[:, 1])
        if np.ma.is_masked(out):
            raise ValueError("evaluation point outside the mesh")
        return np.asarray(out, dtype=float)


_interp_cache: "weakref.WeakKeyDictionary[Mesh, _Interp]" = weakref.WeakKeyDictionary()


def interpolate(mesh: Mesh, values, pts) -> np.ndarray:
    """P1 interpolation of vertex ``values`` at ``pts``."""
    it = _interp_cache.get(mesh)
    if it is None:
        it = _interp_cache[mesh] = _Interp(mesh)
    return it(np.asarray(values, dtype=float), pts)


@dataclass(frozen=True)
class GreenSolution:
    """phi_x0(y) = -(1/2 pi) log|y - x0| + w(y), w harmonic."""
    x0: tuple
    regular_part: ScalarField
    mesh: Mesh

    def evaluate(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return singular_part(pts, self.x0) + interpolate(self.mesh, self.regular_part.values, pts)

    def vertex_values(self) -> np.ndarray:
        """phi_x0 at the mesh vertices (inf at a vertex coinciding with x0)."""
        with np.errstate(divide="ignore"):
            return singular_part(self.mesh.vertices, self.x0) + self.regular_part.values


def solve_green(mesh: Mesh, x0) -> GreenSolution:
    """Green function with pole ``x0`` by splitting off the singularity.

    The regular part w solves the discrete Laplace problem with boundary
    values +(1/2 pi) log|y - x0|, so that phi vanishes at boundary vertices.
    """
    x0 = (float(x0[0]), float(x0[1]))
    d = _boundary_distance(mesh, np.array([x0]))[0]
    tri = Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)
    if tri.get_trifinder()(x0[0], x0[1]) < 0:
        raise ValueError(f"pole {x0} is outside the domain")
    if d <= 2 * mesh.h:
        raise ValueError(f"pole {x0} is within 2h of the boundary (distance {d:.3g})")
    S = system(mesh)
    w = np.zeros(mesh.n_vertices)
    g = -singular_part(mesh.vertices[S.B], x0)
    w[S.B] = g
    w[S.I] = _solve(S, -(S.KIB @ g))
    return GreenSolution(x0, ScalarField(mesh.mesh_id, w, "green_regular_part"), mesh)


# ---------------------------------------------------------------------------
# boundary fluxes
# ---------------------------------------------------------------------------

SourceLike = Union[Source, str]


def _as_source(source: SourceLike) -> Source:
    if isinstance(source, Source):
        return source
    if source in ("torsion", "harmonic"):
        return Source(source)
    raise ValueError(f"source {source!r} needs a coefficient; use Source.eigen / Source.screened")


def boundary_flux(mesh: Mesh, field: ScalarField, source: SourceLike) -> BoundaryField:
    """Consistent recovery of the outward normal derivative.

    The boundary residual R = K u - M f of the Galerkin equations is matched
    by a continuous piecewise-linear trace g, i.e. B g = R with B the
    boundary mass matrix, and the edge values are the edge averages of g.
    The discrete divergence identity sum(flux * length) = -int f is then
    exact up to round-off.
    """
    if field.mesh_id != mesh.mesh_id:
        raise ValueError("field was not computed on this mesh")
    src = _as_source(source)
    S = system(mesh)
    u = field.values
    ones = np.ones(mesh.n_vertices)
    if src.kind == "torsion":
        R = S.K @ u - S.M @ ones
    elif src.kind == "screened":
        R = S.K @ u + src.coef * (S.M @ u) - S.M @ ones
    elif src.kind == "eigen":
        R = S.K @ u - src.coef * (S.M @ u)
    elif src.kind == "harmonic":
        R = S.K @ u
    else:
        raise ValueError(f"unknown source kind {src.kind!r}")
    return _recover(mesh, R)


def _boundary_mass(mesh: Mesh):
    be = mesh.boundary_edges
    bv = np.unique(be)
    loc = -np.ones(mesh.n_vertices, dtype=int)
    loc[bv] = np.arange(len(bv))
    L, _, _ = mesh.edge_geometry()
    i, j = loc[be[:, 0]], loc[be[:, 1]]
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    vals = np.concatenate([L / 3, L / 3, L / 6, L / 6])
    Bm = sp.csc_matrix((vals, (rows, cols)), shape=(len(bv), len(bv)))
    return bv, loc, Bm, L


def _recover(mesh: Mesh, R: np.ndarray) -> BoundaryField:
    bv, loc, Bm, L = _boundary_mass(mesh)
    g = spla.spsolve(Bm, R[bv])
    be = mesh.boundary_edges
    edge = 0.5 * (g[loc[be[:, 0]]] + g[loc[be[:, 1]]])
    nodal = np.zeros(mesh.n_vertices)
    nodal[bv] = g
    return BoundaryField(mesh.mesh_id, edge, mesh.edge_loops.copy(), L, nodal)


def green_flux(mesh: Mesh, green: GreenSolution) -> BoundaryField:
    """Outward normal derivative of phi_x0 on the boundary edges.

    The singular part is integrated exactly over each edge: its flux through
    a straight edge equals minus the subtended angle over 2 pi. The regular
    part uses the consistent recovery for a harmonic field.
    """
    if green.regular_part.mesh_id != mesh.mesh_id:
        raise ValueError("Green function was not computed on this mesh")
    reg = boundary_flux(mesh, green.regular_part, Source.harmonic())
    x0 = np.asarray(green.x0)
    p = mesh.vertices[mesh.boundary_edges[:, 0]] - x0
    q = mesh.vertices[mesh.boundary_edges[:, 1]] - x0
    dtheta = np.arctan2(p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0], (p * q).sum(axis=1))
    sing = -dtheta / (2 * math.pi) / reg.lengths
    return BoundaryField(mesh.mesh_id, reg.values + sing, reg.loop_ids, reg.lengths, None)


def integrate(mesh: Mesh, values) -> float:
    """Exact integral of a P1 field."""
    v = np.asarray(values)
    return float((mesh.areas * v[mesh.triangles].sum(axis=1)).sum() / 3.0)


def vertex_gradients(mesh: Mesh, values) -> np.ndarray:
    """Area-weighted average of the per-triangle gradients at each vertex."""
    S = system(mesh)
    v = np.asarray(values)[mesh.triangles]
    gx = (S.grad_b * v).sum(axis=1) / (2 * S.area)
    gy = (S.grad_c * v).sum(axis=1) / (2 * S.area)
    n = mesh.n_vertices
    w = np.zeros(n)
    G = np.zeros((n, 2))
    for k in range(3):
        idx = mesh.triangles[:, k]
        np.add.at(w, idx, S.area)
        np.add.at(G[:, 0], idx, S.area * gx)
        np.add.at(G[:, 1], idx, S.area * gy)
    return G / w[:, None]
