"""Plane domains: construction, measurement and convex projection.

A :class:`Domain` is a set of closed polylines. Outer loops run
counter-clockwise, hole loops clockwise. Curved loops (circles, ellipses)
keep an analytic descriptor so that curvature is read from the curve and
mesh vertices can be snapped back onto it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from matplotlib.path import Path
from scipy.optimize import minimize


class GeometryError(ValueError):
    """Invalid or unsupported geometric input."""


class NotApplicable(ValueError):
    """A quantity whose hypotheses (convexity, smoothness) do not hold."""


# ---------------------------------------------------------------------------
# analytic curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    kind = "circle"

    def point(self, theta):
        theta = np.asarray(theta, dtype=float)
        cx, cy = self.center
        return np.stack([cx + self.radius * np.cos(theta),
                         cy + self.radius * np.sin(theta)], axis=-1)

    def param(self, pts):
        pts = np.atleast_2d(pts)
        return np.arctan2(pts[:, 1] - self.center[1], pts[:, 0] - self.center[0])

    def curvature(self, theta):
        return np.full(np.shape(theta), 1.0 / self.radius)

    def curvature_range(self):
        return 1.0 / self.radius, 1.0 / self.radius

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    def transformed(self, scale=1.0, shift=(0.0, 0.0)):
        c = (scale * self.center[0] + shift[0], scale * self.center[1] + shift[1])
        return Circle(c, scale * self.radius)


@dataclass(frozen=True)
class Ellipse:
    """Axis-aligned ellipse with semi-axes ``a`` (along x) and ``b`` (along y)."""

    center: tuple[float, float]
    a: float
    b: float

    kind = "ellipse"

    def point(self, theta):
        theta = np.asarray(theta, dtype=float)
        cx, cy = self.center
        return np.stack([cx + self.a * np.cos(theta),
                         cy + self.b * np.sin(theta)], axis=-1)

    def param(self, pts):
        pts = np.atleast_2d(pts)
        return np.arctan2((pts[:, 1] - self.center[1]) / self.b,
                          (pts[:, 0] - self.center[0]) / self.a)

    def curvature(self, theta):
        theta = np.asarray(theta, dtype=float)
        a, b = self.a, self.b
        s = (a * np.sin(theta)) ** 2 + (b * np.cos(theta)) ** 2
        return a * b / s ** 1.5

    def curvature_range(self):
        a, b = self.a, self.b
        lo, hi = sorted((b / a**2, a / b**2))
        return lo, hi

    @property
    def area(self) -> float:
        return math.pi * self.a * self.b

    def transformed(self, scale=1.0, shift=(0.0, 0.0)):
        c = (scale * self.center[0] + shift[0], scale * self.center[1] + shift[1])
        return Ellipse(c, scale * self.a, scale * self.b)


Curve = Union[Circle, Ellipse]


def curve_midpoints(curve: Curve, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Points on ``curve`` halfway (in parameter) between ``p`` and ``q``."""
    t0 = curve.param(p)
    t1 = curve.param(q)
    dt = np.angle(np.exp(1j * (t1 - t0)))
    return curve.point(t0 + 0.5 * dt)


def curve_subdivide(curve: Curve, p, q, k: int) -> np.ndarray:
    """``k - 1`` interior points splitting the short arc p->q into k pieces."""
    t0 = curve.param(p)[0]
    t1 = curve.param(q)[0]
    dt = math.remainder(t1 - t0, 2 * math.pi)
    s = np.arange(1, k) / k
    return curve.point(t0 + s * dt)


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Loop:
    points: np.ndarray
    curve: Optional[Curve] = None

    @property
    def signed_area(self) -> float:
        return signed_area(self.points)

    @property
    def is_hole(self) -> bool:
        return self.signed_area < 0

    @property
    def enclosed_area(self) -> float:
        """Signed area of the region the loop stands for (analytic if curved)."""
        if self.curve is None:
            return self.signed_area
        return math.copysign(self.curve.area, self.signed_area)

    @property
    def perimeter(self) -> float:
        d = np.roll(self.points, -1, axis=0) - self.points
        return float(np.hypot(d[:, 0], d[:, 1]).sum())


@dataclass(frozen=True, eq=False)
class Domain:
    loops: tuple[Loop, ...]
    label: str = "domain"

    def __post_init__(self):
        for lp in self.loops:
            lp.points.setflags(write=False)

    @property
    def outer_loops(self) -> list[Loop]:
        return [lp for lp in self.loops if not lp.is_hole]

    @property
    def hole_loops(self) -> list[Loop]:
        return [lp for lp in self.loops if lp.is_hole]

    def contains(self, pts) -> np.ndarray:
        """Even-odd point membership (strict interior up to round-off)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        count = np.zeros(len(pts), dtype=int)
        for lp in self.loops:
            count += Path(lp.points).contains_points(pts)
        return count % 2 == 1

    def boundary_distance(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        best = np.full(len(pts), np.inf)
        for lp in self.loops:
            a = lp.points
            b = np.roll(a, -1, axis=0)
            best = np.minimum(best, _point_segments_distance(pts, a, b))
        return best

    def transformed(self, scale: float = 1.0, shift=(0.0, 0.0), label=None) -> "Domain":
        """Image under x -> scale * x + shift (curves follow along)."""
        shift = np.asarray(shift, dtype=float)
        loops = tuple(
            Loop(scale * lp.points + shift,
                 None if lp.curve is None else lp.curve.transformed(scale, tuple(shift)))
            for lp in self.loops)
        return Domain(loops, label or self.label)

    def rotated(self, angle: float, label=None) -> "Domain":
        """Rigid rotation about the origin; circles keep their descriptor."""
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        loops = []
        for lp in self.loops:
            curve = lp.curve
            if isinstance(curve, Circle):
                curve = Circle(tuple(rot @ np.asarray(curve.center)), curve.radius)
            elif curve is not None:
                curve = None  # axis-aligned descriptor no longer valid
            loops.append(Loop(lp.points @ rot.T, curve))
        return Domain(tuple(loops), label or self.label)


def _point_segments_distance(pts, a, b):
    """Min distance from each point to the segments a[k]-b[k]."""
    out = np.full(len(pts), np.inf)
    ab = b - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    chunk = max(1, 2_000_000 // max(len(a), 1))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk, None, :]
        t = np.clip(np.einsum("pkj,kj->pk", p - a[None], ab) / L2[None], 0.0, 1.0)
        proj = a[None] + t[..., None] * ab[None]
        d = np.hypot(*(p - proj).transpose(2, 0, 1))
        out[s:s + chunk] = d.min(axis=1)
    return out


def signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_intersect(p1, p2, q1, q2):
    """Proper or touching intersection test for arrays of segment pairs."""
    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - \
               (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])
    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def _loop_self_intersects(pts: np.ndarray) -> bool:
    n = len(pts)
    a, b = pts, np.roll(pts, -1, axis=0)
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    if len(i) == 0:
        return False
    return bool(np.any(_segments_intersect(a[i], b[i], a[j], b[j])))


def _loops_cross(p: np.ndarray, q: np.ndarray) -> bool:
    lo_p, hi_p = p.min(0), p.max(0)
    lo_q, hi_q = q.min(0), q.max(0)
    if np.any(hi_p < lo_q) or np.any(hi_q < lo_p):
        return False
    a, b = p, np.roll(p, -1, axis=0)
    c, d = q, np.roll(q, -1, axis=0)
    return bool(np.any(_segments_intersect(a[:, None], b[:, None], c[None], d[None])))


def validate(domain: Domain) -> Domain:
    """Check the loop invariants; raises :class:`GeometryError`."""
    if not domain.loops:
        raise GeometryError("domain has no loops")
    for k, lp in enumerate(domain.loops):
        if len(lp.points) < 3:
            raise GeometryError(f"loop {k} has fewer than 3 vertices")
        if abs(lp.signed_area) == 0.0:
            raise GeometryError(f"loop {k} has zero area")
        if _loop_self_intersects(lp.points):
            raise GeometryError(f"loop {k} is self-intersecting")
    outers = [lp for lp in domain.loops if not lp.is_hole]
    if not outers:
        raise GeometryError("domain has no counter-clockwise outer loop")
    n = len(domain.loops)
    for i in range(n):
        for j in range(i + 1, n):
            if _loops_cross(domain.loops[i].points, domain.loops[j].points):
                raise GeometryError(f"loops {i} and {j} intersect")
    for k, lp in enumerate(domain.loops):
        if lp.is_hole:
            probe = lp.points[:1]
            if not any(Path(o.points).contains_points(probe)[0] for o in outers):
                raise GeometryError(f"hole loop {k} is not inside an outer loop")
    return domain


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def polygon(vertices, label: str = "polygon") -> Domain:
    pts = np.array(vertices, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise GeometryError("polygon needs at least 3 (x, y) vertices")
    if signed_area(pts) < 0:
        pts = pts[::-1].copy()
    return validate(Domain((Loop(pts),), label))


def _curve_loop(curve: Curve, n_segments: int, hole: bool = False) -> Loop:
    if n_segments < 12:
        raise GeometryError("curved loops need at least 12 segments")
    theta = 2 * np.pi * np.arange(n_segments) / n_segments
    pts = curve.point(theta)
    if hole:
        pts = pts[::-1].copy()
    return Loop(pts, curve)


def disk(center=(0.0, 0.0), radius: float = 1.0, n_segments: int = 64) -> Domain:
    loop = _curve_loop(Circle(tuple(map(float, center)), float(radius)), n_segments)
    return validate(Domain((loop,), "disk"))


def ellipse(a: float, b: float, n_segments: int = 128, center=(0.0, 0.0)) -> Domain:
    loop = _curve_loop(Ellipse(tuple(map(float, center)), float(a), float(b)), n_segments)
    return validate(Domain((loop,), f"ellipse({a:g},{b:g})"))


def equilateral_triangle(side: float = 1.0) -> Domain:
    """Side ``side``, centroid at the origin, horizontal base below."""
    s = float(side)
    r = s / (2 * math.sqrt(3))
    verts = [(-s / 2, -r), (s / 2, -r), (0.0, s / math.sqrt(3))]
    return polygon(verts, label="triangle")


def square(side: float = 1.0) -> Domain:
    """The square (0, side)^2."""
    s = float(side)
    return polygon([(0, 0), (s, 0), (s, s), (0, s)], label="square")


def rectangle(n: float) -> Domain:
    """The rectangle (-n, n) x (0, 1)."""
    n = float(n)
    return polygon([(-n, 0), (n, 0), (n, 1), (-n, 1)], label=f"rectangle({n:g})")


def ball_cluster(n: int, n_segments: int = 64, box: float = 40.0) -> Domain:
    """Unit disk plus ``n`` disjoint disks of radius n^(-1/4).

    Small disks sit on a square grid to the right of the unit disk with gaps
    of at least four radii between any two disks. ``box`` bounds the extent
    of the grid.
    """
    if n < 1:
        raise GeometryError("cluster needs n >= 1")
    r = n ** -0.25
    pitch = 6.0 * r
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    x0 = 1.0 + 4.0 * r + r
    if x0 + (cols - 1) * pitch + r > box or (rows - 1) * pitch / 2 + r > box:
        raise GeometryError(f"cannot place {n} cluster disks inside box {box}")
    loops = [_curve_loop(Circle((0.0, 0.0), 1.0), n_segments)]
    y_mid = (rows - 1) * pitch / 2
    n_small = max(12, int(math.ceil(n_segments * r)))
    for k in range(n):
        i, j = divmod(k, cols)
        c = (x0 + j * pitch, i * pitch - y_mid)
        loops.append(_curve_loop(Circle(c, r), n_small))
    return validate(Domain(tuple(loops), f"cluster({n})"))


@dataclass(frozen=True)
class PerforationParams:
    epsilon: float
    C0: float

    @property
    def r_eps(self) -> float:
        return math.exp(-self.C0 / self.epsilon**2)

    @property
    def a(self) -> float:
        return math.pi / (2.0 * self.C0)

    def __post_init__(self):
        if self.epsilon <= 0 or self.C0 <= 0:
            raise GeometryError("epsilon and C0 must be positive")
        if not self.r_eps < self.epsilon:
            raise GeometryError(
                f"hole radius {self.r_eps:.4g} is not below epsilon {self.epsilon:.4g}")


def perforated(base: Domain, params: PerforationParams, n_segments: int = 12,
               min_feature: float = 1e-3) -> Domain:
    """Remove a 2*epsilon-periodic array of disks of radius r_eps from ``base``.

    Lattice sites sit at the centres of the 2*epsilon cells tiling the
    bounding box of ``base``; only holes lying strictly inside (clear of the
    boundary by one radius) are kept.
    """
    r = params.r_eps
    eps = params.epsilon
    if r < min_feature:
        raise GeometryError(
            f"hole radius r_eps = {r:.3e} is below the minimum feature size {min_feature:g}")
    if len(base.loops) != 1:
        raise GeometryError("perforation base must be a single outer loop")
    lo = base.loops[0].points.min(axis=0)
    hi = base.loops[0].points.max(axis=0)
    xs = np.arange(lo[0] + eps, hi[0], 2 * eps)
    ys = np.arange(lo[1] + eps, hi[1], 2 * eps)
    X, Y = np.meshgrid(xs, ys)
    centers = np.column_stack([X.ravel(), Y.ravel()])
    ok = base.contains(centers) & (base.boundary_distance(centers) > 2 * r)
    loops = list(base.loops)
    for c in centers[ok]:
        loops.append(_curve_loop(Circle(tuple(c), r), n_segments, hole=True))
    return validate(Domain(tuple(loops), f"{base.label}-perforated(eps={eps:g})"))


def build_domain(spec) -> Domain:
    """Build a domain from a compact text spec or a dict.

    Text specs: ``triangle[:side]``, ``square[:side]``, ``disk[:n_segments]``,
    ``ellipse:a,b[,n_segments]``, ``rectangle:n``, ``cluster:n``,
    ``polygon:x1,y1;x2,y2;...``, ``perforated:eps,C0`` (unit square base).
    """
    if isinstance(spec, Domain):
        return spec
    if isinstance(spec, dict):
        kind = spec["kind"]
        args = {k: v for k, v in spec.items() if k != "kind"}
        return _BUILDERS[kind](**args)
    kind, _, rest = str(spec).strip().partition(":")
    kind = kind.strip().lower()
    if kind == "polygon":
        verts = [tuple(float(t) for t in p.split(",")) for p in rest.split(";") if p.strip()]
        return polygon(verts)
    nums = [float(t) for t in rest.split(",") if t.strip()]
    if kind == "triangle":
        return equilateral_triangle(*nums)
    if kind == "square":
        return square(*nums)
    if kind == "disk":
        return disk(n_segments=int(nums[0]) if nums else 64)
    if kind == "ellipse":
        if len(nums) < 2:
            raise GeometryError("ellipse spec needs a,b")
        return ellipse(nums[0], nums[1], int(nums[2]) if len(nums) > 2 else 128)
    if kind == "rectangle":
        return rectangle(nums[0])
    if kind == "cluster":
        return ball_cluster(int(nums[0]))
    if kind == "perforated":
        return perforated(square(), PerforationParams(nums[0], nums[1]))
    raise GeometryError(f"unknown domain spec {spec!r}")


_BUILDERS = {
    "polygon": polygon,
    "disk": disk,
    "ellipse": ellipse,
    "triangle": equilateral_triangle,
    "equilateral_triangle": equilateral_triangle,
    "square": square,
    "rectangle": rectangle,
    "cluster": ball_cluster,
    "ball_cluster": ball_cluster,
}


# ---------------------------------------------------------------------------
# measurement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometryReport:
    """Area is that of the analytic region for curved loops (the limit of
    snapped mesh refinement); other fields refer to the polygonal loops."""
    area: float
    perimeter: float
    convex: bool
    minimal_width: Optional[float] = None
    diameter: Optional[float] = None
    k_min: Optional[float] = None
    k_max: Optional[float] = None


def turning_crosses(pts: np.ndarray) -> np.ndarray:
    e = np.roll(pts, -1, axis=0) - pts
    e_prev = np.roll(e, 1, axis=0)
    return e_prev[:, 0] * e[:, 1] - e_prev[:, 1] * e[:, 0]


def is_convex_polygon(pts: np.ndarray) -> bool:
    scale = float(np.ptp(pts, axis=0).max()) ** 2
    return bool(np.all(turning_crosses(pts) >= -1e-14 * scale))


def minimal_width(pts: np.ndarray) -> float:
    """Width of a convex polygon: min over edges of the farthest vertex distance."""
    e = np.roll(pts, -1, axis=0) - pts
    L = np.hypot(e[:, 0], e[:, 1])
    keep = L > 0
    e, L, base = e[keep], L[keep], pts[keep]
    rel = pts[None, :, :] - base[:, None, :]
    dist = np.abs(e[:, None, 0] * rel[..., 1] - e[:, None, 1] * rel[..., 0]) / L[:, None]
    return float(dist.max(axis=1).min())


def curvature_range(domain: Domain) -> tuple[float, float]:
    """Curvature extrema from analytic loop descriptors."""
    if any(lp.curve is None for lp in domain.loops):
        raise NotApplicable("curvature undefined: domain has non-analytic loops")
    lo, hi = zip(*(lp.curve.curvature_range() for lp in domain.loops))
    return min(lo), max(hi)


def geometry_report(domain: Domain) -> GeometryReport:
    area = sum(lp.enclosed_area for lp in domain.loops)
    perim = sum(lp.perimeter for lp in domain.loops)
    convex = len(domain.loops) == 1 and is_convex_polygon(domain.loops[0].points)
    width = diam = None
    if convex:
        pts = domain.loops[0].points
        width = minimal_width(pts)
        d = pts[:, None, :] - pts[None, :, :]
        diam = float(np.sqrt((d**2).sum(-1)).max())
    try:
        k_min, k_max = curvature_range(domain)
    except NotApplicable:
        k_min = k_max = None
    return GeometryReport(area, perim, convex, width, diam, k_min, k_max)


# ---------------------------------------------------------------------------
# convex projection
# ---------------------------------------------------------------------------

def convex_project(vertices: Sequence) -> np.ndarray:
    """Least-squares radial correction of a polygon to a convex one.

    Vertex directions about the centroid are kept; the radii move as little
    as possible (in the least-squares sense) so that every turning angle is
    non-negative. With reciprocal radii ``w`` the convexity condition at
    each vertex is linear, so the problem is a small QP. Convex inputs are
    returned unchanged.
    """
    pts = np.array(vertices, dtype=float)
    if len(pts) < 3:
        raise GeometryError("need at least 3 vertices")
    A = signed_area(pts)
    scale = float(np.ptp(pts, axis=0).max())
    if scale == 0 or abs(A) < 1e-12 * scale**2:
        raise GeometryError("degenerate polygon (collinear or zero area)")
    if A < 0:
        pts = pts[::-1].copy()
    if is_convex_polygon(pts):
        return pts if A > 0 else pts[::-1].copy()

    c = _area_centroid(pts)
    rel = pts - c
    r0 = np.hypot(rel[:, 0], rel[:, 1])
    theta = np.arctan2(rel[:, 1], rel[:, 0])
    gaps = np.mod(np.roll(theta, -1) - theta, 2 * np.pi)
    if np.any(r0 <= 0) or not math.isclose(gaps.sum(), 2 * np.pi, rel_tol=1e-9) \
            or np.any(gaps >= np.pi):
        raise GeometryError("polygon is not star-shaped about its centroid")
    n = len(pts)
    g_prev = np.roll(gaps, 1)            # theta_i - theta_{i-1}
    g_next = gaps                        # theta_{i+1} - theta_i
    # w_i sin(g_prev+g_next) <= w_{i-1} sin(g_next) + w_{i+1} sin(g_prev)
    C = np.zeros((n, n))
    idx = np.arange(n)
    C[idx, idx] = -np.sin(g_prev + g_next)
    C[idx, (idx - 1) % n] += np.sin(g_next)
    C[idx, (idx + 1) % n] += np.sin(g_prev)
    w0 = 1.0 / r0
    weight = r0**4                       # (r - r0)^2 ~ r0^4 (w - w0)^2
    margin = 1e-12 * w0.max()

    res = minimize(
        lambda w: 0.5 * np.sum(weight * (w - w0) ** 2) / weight.max(),
        w0,
        jac=lambda w: weight * (w - w0) / weight.max(),
        constraints=[{"type": "ineq", "fun": lambda w: C @ w - margin,
                      "jac": lambda w: C}],
        bounds=[(1e-3 * w0.min(), None)] * n,
        method="SLSQP",
        options={"ftol": 1e-15, "maxiter": 500},
    )
    w = res.x
    out = c + (rel / r0[:, None]) / w[:, None]
    if not is_convex_polygon(out):
        raise GeometryError("convex projection failed to converge")
    return out


def _area_centroid(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    A = cr.sum() / 2
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6 * A)


def polygon_centroid(pts: np.ndarray) -> np.ndarray:
    return _area_centroid(np.asarray(pts, dtype=float))
