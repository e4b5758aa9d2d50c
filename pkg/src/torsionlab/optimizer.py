"""Projected gradient ascent of G over convex polygons.

The polygon vertices are the design variables. The gradient with respect
to vertex i is the boundary integral of rho * hat_i * n, where hat_i is the
piecewise-linear hat function of vertex i along the boundary and rho the
optimality residual. After every step the polygon is projected back onto
the convex polygons and rescaled to unit area (G is scale invariant).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .functionals import report_from_levels, solve_level
from .geometry import convex_project, polygon, polygon_centroid, signed_area
from .meshing import Mesh, mesh_levels
from .shape_calculus import field_state

log = logging.getLogger(__name__)

ARMIJO = 0.1
BACKTRACK = 0.5
MAX_FAILS = 20


@dataclass(frozen=True)
class Iterate:
    vertices: np.ndarray
    G: float
    grad_norm: float
    step: float


@dataclass
class OptimTrace:
    iterates: list = field(default_factory=list)
    status: str = ""          # converged | max-iters | stalled
    best: Optional[np.ndarray] = None
    best_G: float = -math.inf
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "best_G": self.best_G,
            "best": self.best.tolist() if self.best is not None else None,
            "iterates": [{"vertices": it.vertices.tolist(), "G": it.G,
                          "grad_norm": it.grad_norm, "step": it.step} for it in self.iterates],
            "diagnostics": self.diagnostics,
        }


def normalize(P) -> np.ndarray:
    """Counter-clockwise, unit area, centroid at the origin."""
    P = np.asarray(P, dtype=float)
    if signed_area(P) < 0:
        P = P[::-1]
    c = polygon_centroid(P)
    return (P - c) / math.sqrt(signed_area(P))


def hat_weights(mesh: Mesh, P: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For each boundary edge midpoint: polygon edge k and the hat values
    (1 - t) at vertex k and t at vertex k + 1."""
    _, _, mid = mesh.edge_geometry()
    Q = np.roll(P, -1, axis=0)
    E = Q - P
    t = np.clip(((mid[:, None] - P) * E).sum(-1) / (E * E).sum(-1), 0, 1)
    r = mid[:, None] - P - t[..., None] * E
    k = np.argmin(np.hypot(r[..., 0], r[..., 1]), axis=1)
    tk = t[np.arange(len(mid)), k]
    return k, 1 - tk, tk


def vertex_gradient(mesh: Mesh, rho: np.ndarray, P: np.ndarray) -> np.ndarray:
    """dG/dP_i = sum over edges of rho * hat_i(midpoint) * n * length."""
    L, n, _ = mesh.edge_geometry()
    k, w0, w1 = hat_weights(mesh, P)
    g = np.zeros_like(P)
    f = (rho * L)[:, None] * n
    np.add.at(g, k, w0[:, None] * f)
    np.add.at(g, (k + 1) % len(P), w1[:, None] * f)
    return g


@dataclass
class Evaluation:
    G: float
    grad: np.ndarray
    G_fine: float


def evaluate(P, h: float = 0.06, levels: int = 2, with_gradient: bool = True) -> Evaluation:
    """Extrapolated G of the polygon and its vertex gradient (finest mesh)."""
    dom = polygon(P, "iterate")
    meshes = mesh_levels(dom, h, levels)
    sols = [solve_level(m) for m in meshes]
    rep = report_from_levels(dom, sols)
    grad = None
    if with_gradient:
        st = field_state(meshes[-1])
        grad = vertex_gradient(meshes[-1], st.rho.values, np.asarray(P, dtype=float))
    return Evaluation(rep.G, grad, sols[-1].M * sols[-1].lam)


def _project(P) -> np.ndarray:
    return normalize(convex_project(P))


def maximize_G(n_vertices: int, seed_shape, max_iters: int = 30, h: float = 0.06,
               levels: int = 2, grad_tol: float = 1e-4, step0: float = 0.05,
               callback=None) -> OptimTrace:
    """Projected gradient ascent with Armijo backtracking.

    ``step0`` is the largest vertex displacement of the first trial step
    (relative to unit area). Terminates when the projected gradient norm
    drops below ``grad_tol * G``, after ``max_iters`` accepted steps, or
    after 20 consecutive rejected trial steps.
    """
    P = np.asarray(seed_shape, dtype=float)
    if len(P) != n_vertices or n_vertices < 3:
        raise ValueError("seed polygon must have n_vertices >= 3 vertices")
    P = _project(P)
    ev = evaluate(P, h, levels)
    trace = OptimTrace()
    gnorm = float(np.linalg.norm(ev.grad))
    trace.iterates.append(Iterate(P.copy(), ev.G, gnorm, 0.0))
    trace.best, trace.best_G = P.copy(), ev.G
    s = step0 / max(float(np.abs(ev.grad).max()), 1e-300)
    fails = 0
    it = 0
    while it < max_iters:
        # projected gradient: displacement of a small projected step
        tiny = 1e-3 * s
        pg = (_project(P + tiny * ev.grad) - P) / tiny
        pg_norm = float(np.linalg.norm(pg))
        if pg_norm < grad_tol * ev.G:
            trace.status = "converged"
            break
        Pn = _project(P + s * ev.grad)
        gain = float((ev.grad * (Pn - P)).sum())
        new = evaluate(Pn, h, levels) if gain > 0 else None
        if new is not None and new.G - ev.G >= ARMIJO * gain:
            P, ev = Pn, new
            it += 1
            fails = 0
            gnorm = float(np.linalg.norm(ev.grad))
            trace.iterates.append(Iterate(P.copy(), ev.G, gnorm, s))
            if ev.G > trace.best_G:
                trace.best, trace.best_G = P.copy(), ev.G
            log.info("iter %d: G = %.8f, |grad| = %.3e, step = %.3e", it, ev.G, gnorm, s)
            if callback:
                callback(trace)
            s *= 2.0
        else:
            fails += 1
            s *= BACKTRACK
            if fails >= MAX_FAILS:
                trace.status = "stalled"
                trace.diagnostics = {"last_gain": gain, "last_step": s,
                                     "last_trial_G": None if new is None else new.G}
                break
    else:
        trace.status = "max-iters"
    return trace


def gradient_check(P, n_probes: int = 3, t: float = 1e-2, h: float = 0.04, levels: int = 2,
                   seed: int = 0) -> list[tuple[float, float, float]]:
    """Directional derivatives along random unit vertex perturbations.

    Each probe gives (vertex gradient . d, central difference of G along d,
    |gradient|). The gradient norm is the natural scale for the error when
    the directional derivative itself is small.
    """
    P = np.asarray(P, dtype=float)
    ev = evaluate(P, h, levels)
    gnorm = float(np.linalg.norm(ev.grad))
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_probes):
        d = rng.standard_normal(P.shape)
        d /= np.linalg.norm(d)
        gp = evaluate(P + t * d, h, levels, with_gradient=False).G
        gm = evaluate(P - t * d, h, levels, with_gradient=False).G
        out.append((float((ev.grad * d).sum()), (gp - gm) / (2 * t), gnorm))
    return out


def regular_polygon(n: int) -> np.ndarray:
    a = 2 * np.pi * np.arange(n) / n + np.pi / 2
    return normalize(np.column_stack([np.cos(a), np.sin(a)]))
