"""Maximum point of the torsion function, shape derivative of G and the
topological field R.

For a domain with torsion function u (maximum M at x0), first eigenpair
(lambda, phi) and Green function phi0 with pole x0, the boundary density

    rho = lambda * du/dn * dphi0/dn - M * (dphi/dn)**2

gives G'(V) = int rho (V.n) ds, split as lambda * M' + M * lambda' with
M' = int du/dn dphi0/dn (V.n) ds and lambda' = -int (dphi/dn)**2 (V.n) ds.
The topological field is R(x) = M phi(x)**2 - lambda u(x) phi0(x).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import fem
from .geometry import Domain, geometry_report, is_convex_polygon
from .meshing import Mesh, mesh_levels

EXTENDED_NOTE = "formula extended beyond stated hypotheses"


# ---------------------------------------------------------------------------
# maximum point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaxPoint:
    x0: tuple
    M_refined: float
    hessian: np.ndarray
    vertex: int = -1
    unique: bool = True
    maxima: tuple = ()   # (location, value) of every separated local maximum


def _adjacency(mesh: Mesh) -> sp.csr_matrix:
    e = mesh.edges
    n = mesh.n_vertices
    A = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    return (A + A.T).tocsr()


def mesh_is_convex(mesh: Mesh) -> bool:
    """Single boundary loop whose vertices form a convex polygon."""
    if len(np.unique(mesh.edge_loops)) != 1:
        return False
    nxt = dict(mesh.boundary_edges.tolist())
    start = int(mesh.boundary_edges[0, 0])
    order = [start]
    v = nxt[start]
    while v != start:
        order.append(v)
        v = nxt[v]
    if len(order) != len(mesh.boundary_edges):
        return False
    return is_convex_polygon(mesh.vertices[order])


def _quadratic_fit(mesh: Mesh, A, i: int, values):
    ring1 = A[i].indices
    ring2 = np.unique(np.concatenate([A[j].indices for j in ring1] + [ring1, [i]]))
    d = mesh.vertices[ring2] - mesh.vertices[i]
    s = float(np.abs(d).max()) or 1.0
    x, y = d[:, 0] / s, d[:, 1] / s
    X = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    c, *_ = np.linalg.lstsq(X, values[ring2], rcond=None)
    g = np.array([c[1], c[2]]) / s
    H = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]]) / s**2
    return c[0], g, H, float(np.hypot(d[:, 0], d[:, 1]).max())


def locate_max(mesh: Mesh, torsion: fem.ScalarField) -> MaxPoint:
    """Maximum of the torsion function refined by a local quadratic fit.

    A quadratic is fitted by least squares over the 2-ring of the largest
    vertex value, and one Newton step (clamped to the patch radius) moves to
    the stationary point of the fit.
    """
    if torsion.mesh_id != mesh.mesh_id:
        raise ValueError("field was not computed on this mesh")
    u = torsion.values
    A = _adjacency(mesh)
    i = int(np.argmax(u))
    c0, g, H, radius = _quadratic_fit(mesh, A, i, u)
    ev, Q = np.linalg.eigh(H)
    # Newton step restricted to directions of negative curvature; flat
    # directions (long thin domains) are left alone
    neg = ev < -1e-8 * max(1.0, float(np.abs(ev).max()))
    if neg.any():
        gq = Q.T @ g
        sq = np.where(neg, -gq / np.where(neg, ev, 1.0), 0.0)
        step = Q @ sq
        r = float(np.hypot(*step))
        if r > radius:
            step *= radius / r
        M = float(c0 + g @ step + 0.5 * step @ H @ step)
        x0 = mesh.vertices[i] + step
    else:
        M = float(u[i])
        x0 = mesh.vertices[i].copy()

    # separated local maxima
    interior = mesh.interior_mask
    nbr_max = np.full(mesh.n_vertices, -np.inf)
    Acoo = A.tocoo()
    np.maximum.at(nbr_max, Acoo.row, u[Acoo.col])
    cand = np.flatnonzero(interior & (u >= nbr_max) & (u > 0))
    cand = cand[np.argsort(-u[cand], kind="stable")]
    kept = []
    sep = 4.0 * mesh.h
    for k in cand:
        p = mesh.vertices[k]
        if all(np.hypot(*(p - mesh.vertices[j])) > sep for j in kept):
            kept.append(int(k))
    maxima = tuple((tuple(mesh.vertices[k]), float(u[k])) for k in kept)
    unique = len(kept) <= 1 or mesh_is_convex(mesh)
    return MaxPoint((float(x0[0]), float(x0[1])), M, H, i, unique, maxima)


# ---------------------------------------------------------------------------
# boundary quantities on one mesh
# ---------------------------------------------------------------------------

@dataclass
class FieldState:
    """Everything the boundary formulas need, computed on one mesh."""
    mesh: Mesh
    torsion: fem.ScalarField
    eigen: fem.EigenSolution
    maxpoint: MaxPoint
    green: fem.GreenSolution
    du: fem.BoundaryField
    dphi: fem.BoundaryField
    dgreen: fem.BoundaryField

    @property
    def M(self) -> float:
        return self.maxpoint.M_refined

    @property
    def lam(self) -> float:
        return self.eigen.lambda1

    @property
    def rho(self) -> fem.BoundaryField:
        v = self.lam * self.du.values * self.dgreen.values - self.M * self.dphi.values**2
        return fem.BoundaryField(self.mesh.mesh_id, v, self.du.loop_ids, self.du.lengths)


def field_state(mesh: Mesh, eigen_method: str = "inverse") -> FieldState:
    u = fem.solve_torsion(mesh)
    eig = fem.solve_eigenpair(mesh, method=eigen_method)
    mp = locate_max(mesh, u)
    green = fem.solve_green(mesh, mp.x0)
    return FieldState(
        mesh, u, eig, mp, green,
        fem.boundary_flux(mesh, u, fem.Source.torsion()),
        fem.boundary_flux(mesh, eig.phi, fem.Source.eigen(eig.lambda1)),
        fem.green_flux(mesh, green),
    )


def optimality_residual(domain: Domain, h: float, refinements: int = 0) -> fem.BoundaryField:
    """Edgewise optimality residual rho on a mesh of ``domain``."""
    mesh = mesh_levels(domain, h, refinements + 1)[-1]
    return field_state(mesh).rho


@dataclass(frozen=True)
class ResidualSummary:
    sup_normalized: float   # max |rho| / (M lambda / perimeter)
    mean_normalized: float  # int rho ds / (M lambda)
    translation: tuple      # int rho n ds / (M lambda)
    dilation: float         # int rho (x - c).n ds / (M lambda |Omega|^(1/2))


def residual_summary(state: FieldState) -> ResidualSummary:
    rho = state.rho
    L, n, mid = state.mesh.edge_geometry()
    scale = state.M * state.lam
    per = float(L.sum())
    c = np.asarray(state.maxpoint.x0)
    area = float(state.mesh.areas.sum())
    return ResidualSummary(
        float(np.abs(rho.values).max() / (scale / per)),
        rho.integral() / scale,
        (float((rho.values * n[:, 0] * L).sum() / scale),
         float((rho.values * n[:, 1] * L).sum() / scale)),
        float((rho.values * ((mid - c) * n).sum(1) * L).sum() / (scale * math.sqrt(area))),
    )


# ---------------------------------------------------------------------------
# shape derivative
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShapeVelocity:
    """A deformation field, either analytic or given at polygon vertices.

    ``field`` maps an (N, 2) array of points to (N, 2) velocities.
    Otherwise ``vertices``/``displacements`` describe a single boundary loop
    and the velocity is interpolated linearly along its edges.
    """
    field: Optional[Callable] = None
    vertices: Optional[np.ndarray] = None
    displacements: Optional[np.ndarray] = None
    name: str = ""

    @classmethod
    def named(cls, name: str, center=(0.0, 0.0)) -> "ShapeVelocity":
        cx, cy = center
        table = {
            "translate-x": lambda p: np.column_stack([np.ones(len(p)), np.zeros(len(p))]),
            "translate-y": lambda p: np.column_stack([np.zeros(len(p)), np.ones(len(p))]),
            "dilation": lambda p: p - np.array([cx, cy]),
            "squeeze": lambda p: np.column_stack([p[:, 0] - cx, -(p[:, 1] - cy)]),
            "rotation": lambda p: np.column_stack([-(p[:, 1] - cy), p[:, 0] - cx]),
        }
        if name not in table:
            raise ValueError(f"unknown velocity field {name!r}; choose from {sorted(table)}")
        return cls(field=table[name], name=name)

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.field is not None:
            return np.asarray(self.field(pts), dtype=float).reshape(len(pts), 2)
        P = np.asarray(self.vertices, dtype=float)
        D = np.asarray(self.displacements, dtype=float)
        Q = np.roll(P, -1, axis=0)
        E = Q - P
        t = np.clip(((pts[:, None] - P) * E).sum(-1) / (E * E).sum(-1), 0, 1)
        r = pts[:, None] - P - t[..., None] * E
        k = np.argmin(np.hypot(r[..., 0], r[..., 1]), axis=1)
        tk = t[np.arange(len(pts)), k][:, None]
        return (1 - tk) * D[k] + tk * np.roll(D, -1, axis=0)[k]


@dataclass(frozen=True)
class DerivativeReport:
    G_prime: float
    M_prime: float
    lambda_prime: float
    M: float
    lambda1: float
    decomposition: tuple     # (M' lambda, M lambda')
    residual_field: fem.BoundaryField
    note: str = ""

    @property
    def G(self) -> float:
        return self.M * self.lambda1


def derivative_from_state(state: FieldState, V: ShapeVelocity, note: str = "") -> DerivativeReport:
    L, n, mid = state.mesh.edge_geometry()
    Vn = (V(mid) * n).sum(axis=1)
    Mp = float((state.du.values * state.dgreen.values * Vn * L).sum())
    lp = -float((state.dphi.values**2 * Vn * L).sum())
    rho = state.rho
    Gp = float((rho.values * Vn * L).sum())
    return DerivativeReport(Gp, Mp, lp, state.M, state.lam,
                            (Mp * state.lam, state.M * lp), rho, note)


def shape_derivative(domain: Domain, V: ShapeVelocity, h: float,
                     refinements: int = 0) -> DerivativeReport:
    """G'(domain, V) by edge-midpoint quadrature of rho (V.n)."""
    note = "" if geometry_report(domain).convex else EXTENDED_NOTE
    mesh = mesh_levels(domain, h, refinements + 1)[-1]
    return derivative_from_state(field_state(mesh), V, note)


def finite_difference_G(domain_fn: Callable[[float], Domain], t: float, h: float,
                        levels: int = 2) -> float:
    """Central difference (G(t) - G(-t)) / 2t with remeshing at each t."""
    from .functionals import functional_report
    gp = functional_report(domain_fn(t), h, levels).G
    gm = functional_report(domain_fn(-t), h, levels).G
    return (gp - gm) / (2 * t)


def finite_difference_transport(domain: Domain, V: "ShapeVelocity", t: float, h: float,
                                levels: int = 2) -> float:
    """Central difference of G along x -> x + s V(x), s = +-t.

    Every mesh level is moved vertex by vertex, so G(s) is computed on the
    same connectivity for both signs and the difference quotient is free of
    remeshing noise."""
    from .functionals import report_from_levels, solve_level
    meshes = mesh_levels(domain, h, levels)

    def G(s):
        sols = [solve_level(m.moved(s * V(m.vertices))) for m in meshes]
        return report_from_levels(domain, sols).G

    return (G(t) - G(-t)) / (2 * t)


# ---------------------------------------------------------------------------
# topological field
# ---------------------------------------------------------------------------

def _topo_on_mesh(mesh: Mesh, pts: np.ndarray, swap: bool) -> np.ndarray:
    u = fem.solve_torsion(mesh)
    eig = fem.solve_eigenpair(mesh)
    mp = locate_max(mesh, u)
    x0 = np.asarray(mp.x0)
    h = mesh.h
    dist = fem._boundary_distance(mesh, pts)
    for p, d in zip(pts, dist):
        if d <= 2 * h:
            raise ValueError(f"point {tuple(p)} is within 2h of the boundary")
        if np.hypot(*(p - x0)) <= 2 * h:
            raise ValueError(f"point {tuple(p)} is too close to the maximum point")
    uu = fem.interpolate(mesh, u.values, pts)
    ph = fem.interpolate(mesh, eig.phi.values, pts)
    if swap:
        g = np.array([fem.solve_green(mesh, p).evaluate(x0[None])[0] for p in pts])
    else:
        g = fem.solve_green(mesh, mp.x0).evaluate(pts)
    return mp.M_refined * ph**2 - eig.lambda1 * uu * g


def topological_field(domain: Domain, points: Sequence, h: float, levels: int = 2,
                      swap: bool = False) -> list[float]:
    """R(x) = M phi(x)^2 - lambda u(x) phi0(x) at the given points.

    Values from the two finest levels are combined by Richardson
    extrapolation. With ``swap`` the Green function is evaluated with the
    roles of pole and evaluation point exchanged.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(domain.contains(pts)):
        raise ValueError("all points must lie inside the domain")
    meshes = mesh_levels(domain, h, levels)
    vals = [_topo_on_mesh(m, pts, swap) for m in meshes[-2:]] if levels >= 2 else \
        [_topo_on_mesh(meshes[-1], pts, swap)]
    if len(vals) == 1:
        return vals[0].tolist()
    return ((4 * vals[1] - vals[0]) / 3).tolist()
