"""Torsion and eigenvalue functionals with Richardson extrapolation, the
curvature constants alpha and beta, and audits of the known inequalities.

    T = int u,   M = max u,   F = T / (M |Omega|),   G = M lambda_1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fem
from .geometry import Domain, NotApplicable, curvature_range, geometry_report
from .meshing import Mesh, mesh_levels
from .shape_calculus import MaxPoint, locate_max, mesh_is_convex

D = 2
VOGT_BOUND = D / 4 + 0.25 * math.sqrt(5 * (1 + math.log(2) / 4)) * math.sqrt(D) + 1
SEMIGROUP_BOUND = 3 * D * math.log(2) + 4
PAYNE_BOUND = math.pi**2 / 8


def richardson(coarse: float, fine: float) -> float:
    """Second-order extrapolation from values at h and h/2."""
    return (4.0 * fine - coarse) / 3.0


@dataclass
class LevelSolution:
    mesh: Mesh
    torsion: fem.ScalarField
    eigen: fem.EigenSolution
    maxpoint: MaxPoint
    T: float

    @property
    def M(self) -> float:
        return self.maxpoint.M_refined

    @property
    def lam(self) -> float:
        return self.eigen.lambda1


def solve_level(mesh: Mesh, eigen_method: str = "inverse") -> LevelSolution:
    u = fem.solve_torsion(mesh)
    eig = fem.solve_eigenpair(mesh, method=eigen_method)
    return LevelSolution(mesh, u, eig, locate_max(mesh, u), fem.integrate(mesh, u.values))


@dataclass(frozen=True)
class FunctionalReport:
    label: str
    table: tuple          # rows (h, T_h, M_h, lambda_h)
    T: float
    M: float
    lambda1: float
    x0: tuple
    area: float
    convex: bool
    unique_max: bool = True

    @property
    def F(self) -> float:
        return self.T / (self.M * self.area)

    @property
    def G(self) -> float:
        return self.M * self.lambda1

    def level_values(self, name: str) -> list[float]:
        """Per-level F or G (unextrapolated)."""
        out = []
        for h, T, M, lam in self.table:
            out.append(T / (M * self.area) if name == "F" else M * lam)
        return out

    def uncertainty(self, name: str) -> float:
        """Difference of the two finest per-level values."""
        v = self.level_values(name)
        return abs(v[-1] - v[-2])

    def as_dict(self) -> dict:
        return {
            "domain": self.label,
            "levels": [dict(zip(("h", "T", "M", "lambda1"), r)) for r in self.table],
            "T": self.T, "M": self.M, "lambda1": self.lambda1,
            "x0": list(self.x0), "area": self.area, "convex": self.convex,
            "F": self.F, "G": self.G,
            "F_uncertainty": self.uncertainty("F"), "G_uncertainty": self.uncertainty("G"),
        }


def report_from_levels(domain: Domain, sols: list[LevelSolution]) -> FunctionalReport:
    if len(sols) < 2:
        raise ValueError("need at least two levels for extrapolation")
    geo = geometry_report(domain)
    table = tuple((s.mesh.h, s.T, s.M, s.lam) for s in sols)
    c, f = sols[-2], sols[-1]
    return FunctionalReport(
        domain.label, table,
        richardson(c.T, f.T), richardson(c.M, f.M), richardson(c.lam, f.lam),
        f.maxpoint.x0, geo.area, geo.convex, f.maxpoint.unique,
    )


def functional_report(domain: Domain, h: float, levels: int = 2,
                      eigen_method: str = "inverse") -> FunctionalReport:
    """T, M, lambda_1, F and G from ``levels`` nested meshes, extrapolated."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    meshes = mesh_levels(domain, h, levels)
    return report_from_levels(domain, [solve_level(m, eigen_method) for m in meshes])


# ---------------------------------------------------------------------------
# curvature constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurvatureBounds:
    alpha: float
    beta: float
    F_window: tuple
    F_floor: float


def curvature_bounds(domain: Domain) -> CurvatureBounds:
    """alpha = (k_min/k_max)^3 / 4 and beta = 2 - alpha for smooth convex domains."""
    if len(domain.loops) != 1:
        raise NotApplicable("curvature bounds need a single convex boundary curve")
    k_min, k_max = curvature_range(domain)
    if not k_min > 0:
        raise NotApplicable("curvature bounds need strict convexity")
    alpha = (k_min / k_max) ** 3 / 4
    beta = 2 - alpha
    return CurvatureBounds(alpha, beta, (alpha / (alpha + 1), beta / (beta + 1)), alpha)


def gradient_ratio_bounds(mesh: Mesh, torsion: fem.ScalarField, M: float,
                          domain: Domain) -> tuple[float, float, float]:
    """Discrete (P_min, alpha~, beta~) with P_min = min over the boundary of k |grad u|^3.

    Diagnostic only: the curvature comes from the analytic loop descriptor
    and |grad u| from the recovered boundary flux.
    """
    if len(domain.loops) != 1 or domain.loops[0].curve is None:
        raise NotApplicable("curvature undefined on this boundary")
    curve = domain.loops[0].curve
    flux = fem.boundary_flux(mesh, torsion, fem.Source.torsion())
    bv = np.unique(mesh.boundary_edges)
    k = curve.curvature(curve.param(mesh.vertices[bv]))
    P_min = float((k * np.abs(flux.nodal[bv]) ** 3).min())
    s = math.sqrt(max(0.0, 1 - 2 * P_min / M))
    return P_min, 1 - s, 1 + s


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundCheck:
    name: str
    inequality: str
    margin: float
    status: str   # holds | violated | not-applicable | conjecture: consistent/inconsistent


def _check(name, ineq, margin, bound, allowance):
    ok = margin >= -allowance * abs(bound)
    return BoundCheck(name, ineq, margin, "holds" if ok else "violated")


def bound_audit(domain: Domain, report: FunctionalReport,
                allowance: float = 0.005) -> list[BoundCheck]:
    """Check every applicable inequality; margins are positive when it holds."""
    F, G = report.F, report.G
    out = [
        _check("F<=1", "F <= 1", 1 - F, 1.0, allowance),
        _check("G>=1", "G >= 1", G - 1, 1.0, allowance),
        _check("G<=3d ln2+4", f"G <= {SEMIGROUP_BOUND:.6f}", SEMIGROUP_BOUND - G,
               SEMIGROUP_BOUND, allowance),
        _check("G<=vogt", f"G <= {VOGT_BOUND:.6f}", VOGT_BOUND - G, VOGT_BOUND, allowance),
    ]
    convex_names = [("F<=2/3", "F <= 2/3"), ("F>=1/(d+1)^2", "F >= 1/9"),
                    ("G>=pi^2/8", "G >= pi^2/8"), ("F>=1/3 (conjecture)", "F >= 1/3")]
    if report.convex:
        out.append(_check("F<=2/3", "F <= 2/3", 2 / 3 - F, 2 / 3, allowance))
        out.append(_check("F>=1/(d+1)^2", "F >= 1/9", F - 1 / 9, 1 / 9, allowance))
        out.append(_check("G>=pi^2/8", "G >= pi^2/8", G - PAYNE_BOUND, PAYNE_BOUND, allowance))
        m = F - 1 / 3
        out.append(BoundCheck("F>=1/3 (conjecture)", "F >= 1/3", m,
                              "conjecture: consistent" if m >= 0 else "conjecture: inconsistent"))
    else:
        out.extend(BoundCheck(n, i, float("nan"), "not-applicable") for n, i in convex_names)
    try:
        cb = curvature_bounds(domain) if report.convex else None
    except NotApplicable:
        cb = None
    if cb is not None:
        hi = cb.beta / (cb.beta + 1)
        out.append(_check("F<=beta/(beta+1)", f"F <= {hi:.6f}", hi - F, hi, allowance))
        out.append(_check("F>=alpha", f"F >= {cb.alpha:.6g}", F - cb.alpha, cb.alpha, allowance))
    else:
        out.append(BoundCheck("F<=beta/(beta+1)", "F <= beta/(beta+1)", float("nan"), "not-applicable"))
        out.append(BoundCheck("F>=alpha", "F >= alpha", float("nan"), "not-applicable"))
    return out


@dataclass(frozen=True)
class PFunctionResult:
    max_P: float
    ratio: float     # max_P / (2 M)


def p_function_check(mesh: Mesh, torsion: fem.ScalarField, M: float) -> PFunctionResult:
    """Maximum over vertices of |grad u|^2 + 2u, compared with 2M.

    Gradients are per-triangle, averaged to vertices with area weights. Only
    meaningful on convex domains.
    """
    if not mesh_is_convex(mesh):
        raise NotApplicable("P-function bound is stated for convex domains")
    g = fem.vertex_gradients(mesh, torsion.values)
    P = (g**2).sum(axis=1) + 2 * torsion.values
    mx = float(P.max())
    return PFunctionResult(mx, mx / (2 * M))
