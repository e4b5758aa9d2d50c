"""Quality triangulation of plane domains and uniform refinement.

Meshes are built by Delaunay refinement: the boundary loops are split into
segments no longer than the target size, the interior is seeded with a
triangular lattice, and then encroached segments are split and the
circumcentres of skinny or oversized triangles are inserted (Ruppert's
rules) until every triangle meets the angle floor and size bound. All
boundary segments end up as Delaunay edges, so the result is a conforming
Delaunay triangulation. Everything is deterministic: the Delaunay step is
a pure function of the point array, and points are appended in a fixed
order.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path
from scipy.spatial import Delaunay, cKDTree

from .geometry import Domain, curve_midpoints, curve_subdivide

log = logging.getLogger(__name__)

_ids = itertools.count(1)


class MeshError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray          # (N, 2)
    triangles: np.ndarray         # (T, 3), counter-clockwise
    boundary_edges: np.ndarray    # (B, 2), oriented with the domain on the left
    edge_loops: np.ndarray        # (B,), loop id of each boundary edge
    curves: tuple = ()            # analytic descriptor (or None) per loop id
    corner_angles: dict = field(default_factory=dict)  # input-corner vertex -> angle
    mesh_id: int = field(default_factory=lambda: next(_ids))

    def __post_init__(self):
        for a in (self.vertices, self.triangles, self.boundary_edges, self.edge_loops):
            a.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def h(self) -> float:
        e = self.edges
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        return float(np.hypot(d[:, 0], d[:, 1]).max())

    @property
    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @property
    def areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.triangles)

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    @property
    def interior_mask(self) -> np.ndarray:
        m = np.ones(self.n_vertices, dtype=bool)
        m[self.boundary_edges.ravel()] = False
        return m

    def edge_geometry(self):
        """Lengths, outward unit normals and midpoints of the boundary edges."""
        p = self.vertices[self.boundary_edges[:, 0]]
        q = self.vertices[self.boundary_edges[:, 1]]
        d = q - p
        L = np.hypot(d[:, 0], d[:, 1])
        n = np.column_stack([d[:, 1], -d[:, 0]]) / L[:, None]
        return L, n, 0.5 * (p + q)

    def transformed(self, scale: float = 1.0, shift=(0.0, 0.0), rotation: float = 0.0) -> "Mesh":
        """Image under x -> scale * R(rotation) x + shift, same connectivity."""
        c, s = math.cos(rotation), math.sin(rotation)
        R = np.array([[c, -s], [s, c]])
        v = self.vertices @ R.T if rotation else self.vertices.copy()
        v = scale * v + np.asarray(shift, dtype=float)
        curves = tuple(None if cv is None or rotation else cv.transformed(scale, tuple(shift))
                       for cv in self.curves)
        return Mesh(v, self.triangles.copy(), self.boundary_edges.copy(),
                    self.edge_loops.copy(), curves, dict(self.corner_angles))

    def moved(self, displacement) -> "Mesh":
        """Vertices shifted by ``displacement`` (N, 2), same connectivity.

        The result carries no analytic boundary descriptors, so it must not
        be refined further."""
        v = self.vertices + np.asarray(displacement, dtype=float)
        return Mesh(v, self.triangles.copy(), self.boundary_edges.copy(),
                    self.edge_loops.copy(), tuple(None for _ in self.curves),
                    dict(self.corner_angles))


def triangle_areas(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def triangle_angles(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Interior angles (degrees), column k is the angle at vertex t[:, k]."""
    P = v[t]
    out = np.empty(t.shape)
    for k in range(3):
        a = P[:, (k + 1) % 3] - P[:, k]
        b = P[:, (k + 2) % 3] - P[:, k]
        cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        dot = (a * b).sum(axis=1)
        out[:, k] = np.degrees(np.arctan2(np.abs(cross), dot))
    return out


def _max_edge(v, t):
    P = v[t]
    d = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 1], P[:, 0] - P[:, 2]], axis=1)
    return np.hypot(d[..., 0], d[..., 1]).max(axis=1)


def _circumcenters(v, t):
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    bx, by = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    cx, cy = c[:, 0] - a[:, 0], c[:, 1] - a[:, 1]
    d = 2.0 * (bx * cy - by * cx)
    b2, c2 = bx**2 + by**2, cx**2 + cy**2
    ux = (cy * b2 - by * c2) / d
    uy = (bx * c2 - cx * b2) / d
    return a + np.column_stack([ux, uy]), np.hypot(ux, uy)


# ---------------------------------------------------------------------------
# triangulation
# ---------------------------------------------------------------------------

class _Pslg:
    """Mutable boundary description used while refining."""

    def __init__(self, curves):
        self.pts: list = []
        self.seg: list = []          # [i, j, loop]
        self.curves = curves
        self.corner_angle: dict = {}

    def add(self, p) -> int:
        self.pts.append((float(p[0]), float(p[1])))
        return len(self.pts) - 1


def _check_features(domain: Domain, h: float) -> None:
    for k, lp in enumerate(domain.loops):
        if lp.perimeter / h < 6.0:
            what = "hole" if lp.is_hole else "outer"
            raise MeshError(f"unresolved feature: {what} loop {k} (perimeter "
                            f"{lp.perimeter:.4g}) is too small for h_target={h:g}")


def _discretize(domain: Domain, h: float) -> _Pslg:
    pslg = _Pslg(tuple(lp.curve for lp in domain.loops))
    for li, lp in enumerate(domain.loops):
        P = lp.points
        n = len(P)
        idx = [pslg.add(p) for p in P]
        if lp.curve is None:
            e_in = P - np.roll(P, 1, axis=0)
            e_out = np.roll(P, -1, axis=0) - P
            turn = np.arctan2(e_in[:, 0] * e_out[:, 1] - e_in[:, 1] * e_out[:, 0],
                              (e_in * e_out).sum(1))
            for k in range(n):
                pslg.corner_angle[idx[k]] = math.degrees(math.pi - turn[k])
        for k in range(n):
            p, q = P[k], P[(k + 1) % n]
            L = float(np.hypot(*(q - p)))
            m = max(1, math.ceil(L / (0.8 * h) - 1e-9))
            if lp.curve is None:
                inner = p + np.outer(np.arange(1, m) / m, q - p)
            else:
                inner = curve_subdivide(lp.curve, p[None], q[None], m)
            chain = [idx[k]] + [pslg.add(x) for x in inner] + [idx[(k + 1) % n]]
            for a, b in zip(chain[:-1], chain[1:]):
                pslg.seg.append([a, b, li])
    return pslg


def _lattice(domain: Domain, h: float, pslg: _Pslg) -> np.ndarray:
    s = 0.8 * h
    bpts = np.asarray(pslg.pts)
    lo, hi = bpts.min(0), bpts.max(0)
    dy = s * math.sqrt(3) / 2
    ys = np.arange(lo[1] + dy / 2, hi[1], dy)
    rows = []
    for r, y in enumerate(ys):
        off = 0.5 * s * (r % 2)
        xs = np.arange(lo[0] + s / 2 + off, hi[0], s)
        rows.append(np.column_stack([xs, np.full(len(xs), y)]))
    if not rows:
        return np.zeros((0, 2))
    L = np.concatenate(rows)
    L = L[domain.contains(L)]
    if len(L) == 0:
        return L
    seg = np.asarray(pslg.seg)[:, :2]
    a, b = bpts[seg[:, 0]], bpts[seg[:, 1]]
    mids = 0.5 * (a + b)
    half = 0.5 * np.hypot(*(b - a).T)
    tree = cKDTree(mids)
    # exact distance to the nearest few segments
    k = min(8, len(mids))
    _, nn = tree.query(L, k=k)
    nn = nn.reshape(len(L), -1)
    A, B = a[nn], b[nn]
    AB = B - A
    t = np.clip(np.einsum("pkj,pkj->pk", L[:, None] - A, AB) / np.einsum("pkj,pkj->pk", AB, AB), 0, 1)
    dist = np.hypot(*(L[:, None] - A - t[..., None] * AB).transpose(2, 0, 1)).min(1)
    keep = dist > 0.55 * s
    # keep segments unencroached from the start
    cnt = tree.query_ball_point(L, r=half.max() * 1.0001, return_sorted=False)
    for i, c in enumerate(cnt):
        if keep[i] and c:
            c = np.asarray(c)
            if np.any(np.hypot(*(mids[c] - L[i]).T) < half[c] * 1.0001):
                keep[i] = False
    return L[keep]


def _split_segment(pslg: _Pslg, s: int, small_corner: float) -> None:
    i, j, li = pslg.seg[s]
    p, q = np.asarray(pslg.pts[i]), np.asarray(pslg.pts[j])
    curve = pslg.curves[li]
    if curve is not None:
        m = curve_midpoints(curve, p[None], q[None])[0]
    else:
        L = float(np.hypot(*(q - p)))
        t = 0.5
        # concentric shells around acute input corners
        for end, sign in ((i, 1), (j, -1)):
            ang = pslg.corner_angle.get(end)
            if ang is not None and ang < small_corner:
                d = 2.0 ** round(math.log2(0.5 * L))
                d = min(max(d, 0.25 * L), 0.75 * L)
                t = d / L if sign == 1 else 1 - d / L
                break
        m = p + t * (q - p)
    k = pslg.add(m)
    pslg.seg[s] = [i, k, li]
    pslg.seg.append([k, j, li])


def triangulate(domain: Domain, h_target: float, min_angle: float = 20.0,
                quality_angle: float = 26.0, max_rounds: int = 400) -> Mesh:
    """Conforming Delaunay triangulation with max edge <= h_target.

    Raises :class:`MeshError` when a loop cannot be resolved at h_target.
    """
    if not h_target > 0:
        raise ValueError("h_target must be positive")
    _check_features(domain, h_target)
    pslg = _discretize(domain, h_target)
    n_fixed = len(pslg.pts)
    interior = _lattice(domain, h_target, pslg)
    extra = [tuple(p) for p in interior]
    h_min = h_target / 256.0
    small_corner = 60.0

    for rnd in range(max_rounds):
        P = np.asarray(pslg.pts + extra)
        nb = len(pslg.pts)
        seg = np.asarray(pslg.seg)
        a, b = P[seg[:, 0]], P[seg[:, 1]]
        mids = 0.5 * (a + b)
        half = 0.5 * np.hypot(*(b - a).T)
        tree = cKDTree(P)
        counts = tree.query_ball_point(mids, r=half * (1 + 1e-9), return_length=True)
        encroached = np.flatnonzero((counts > 2) & (half > h_min))
        if len(encroached):
            # points not on the boundary that sit in a diametral circle are removed
            _drop_encroaching(extra, P[nb:], mids[encroached], half[encroached])
            for s in encroached:
                _split_segment(pslg, int(s), small_corner)
            continue

        inside_fn = _segment_region(P, seg)
        tri = _delaunay(P)
        tri = tri[inside_fn(P[tri].mean(axis=1))]
        ang = triangle_angles(P, tri)
        amin = ang.min(axis=1)
        exempt = _exempt(tri, ang, pslg, n_fixed, small_corner, quality_angle)
        bad = ((amin < quality_angle) & ~exempt) | (_max_edge(P, tri) > h_target)
        bad_idx = np.flatnonzero(bad)
        if len(bad_idx) == 0:
            return _finish(P, tri, pslg, domain)
        cc, R = _circumcenters(P, tri[bad_idx])
        # circumcentres that encroach a segment trigger a segment split instead
        stree = cKDTree(mids)
        near = stree.query_ball_point(cc, r=half.max() * (1 + 1e-9))
        inside = inside_fn(cc)
        to_split = set()
        insert = []
        for k, lst in enumerate(near):
            hit = [s for s in lst if np.hypot(*(cc[k] - mids[s])) < half[s] * (1 + 1e-9)
                   and half[s] > h_min]
            if hit:
                to_split.update(hit)
            elif inside[k]:
                insert.append(k)
            else:
                d = np.hypot(*(mids - cc[k]).T) - half
                s = int(np.argmin(d))
                if half[s] > h_min:
                    to_split.add(s)
        if to_split:
            for s in sorted(to_split):
                _split_segment(pslg, s, small_corner)
            continue
        if not insert:
            log.warning("mesh refinement stalled with %d bad triangles", len(bad_idx))
            return _finish(P, tri, pslg, domain)
        insert = np.asarray(insert)
        chosen = _independent(cc[insert], R[insert], amin[bad_idx][insert])
        extra.extend(map(tuple, cc[insert][chosen]))
    raise MeshError(f"mesh refinement did not terminate in {max_rounds} rounds")


def _segment_region(P, seg):
    """Even-odd membership test against the current boundary segments.

    The refined boundary (with points moved onto curves) is used rather than
    the input polygon, so slivers between a chord and its arc are classified
    correctly.
    """
    nxt = {int(i): int(j) for i, j, _ in seg}
    paths = []
    seen = set()
    for start in nxt:
        if start in seen:
            continue
        chain = [start]
        seen.add(start)
        v = nxt[start]
        while v != start:
            chain.append(v)
            seen.add(v)
            v = nxt[v]
        paths.append(Path(P[chain]))

    def inside(x):
        x = np.atleast_2d(x)
        c = np.zeros(len(x), dtype=int)
        for pa in paths:
            c += pa.contains_points(x)
        return c % 2 == 1
    return inside


def _delaunay(P):
    t = Delaunay(P).simplices
    ar = triangle_areas(P, t)
    t = np.where((ar < 0)[:, None], t[:, [0, 2, 1]], t)
    # qhull may return flat triangles spanning collinear points on hull edges
    flat = np.abs(ar) <= 1e-10 * _max_edge(P, t) ** 2
    return t[~flat]


def _drop_encroaching(extra, E, mids, half):
    if not len(E):
        return
    tree = cKDTree(E)
    hits = tree.query_ball_point(mids, r=half * (1 + 1e-9))
    bad = sorted({i for lst in hits for i in lst}, reverse=True)
    for i in bad:
        del extra[i]


def _exempt(tri, ang, pslg, n_fixed, small_corner, quality_angle):
    """Triangles whose smallest angle sits at an acute input corner."""
    if not pslg.corner_angle:
        return np.zeros(len(tri), dtype=bool)
    k = np.argmin(ang, axis=1)
    v = tri[np.arange(len(tri)), k]
    out = np.zeros(len(tri), dtype=bool)
    for i in np.flatnonzero(v < n_fixed):
        a = pslg.corner_angle.get(int(v[i]))
        if a is not None and a < small_corner:
            out[i] = True
    return out


def _independent(cc, R, quality):
    order = np.lexsort((np.arange(len(cc)), quality))
    tree = cKDTree(cc)
    blocked = np.zeros(len(cc), dtype=bool)
    chosen = []
    for i in order:
        if blocked[i]:
            continue
        chosen.append(i)
        for j in tree.query_ball_point(cc[i], 0.5 * R[i]):
            blocked[j] = True
    return np.asarray(sorted(chosen), dtype=int)


def _finish(P, tri, pslg, domain) -> Mesh:
    used = np.unique(tri)
    remap = -np.ones(len(P), dtype=int)
    remap[used] = np.arange(len(used))
    V = P[used]
    T = remap[tri]
    seg = np.asarray(pslg.seg)
    seg_loop = {(min(i, j), max(i, j)): li for i, j, li in seg}
    # boundary edges as they appear in the triangles (interior on the left)
    E = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    key = np.sort(E, axis=1)
    _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bd = E[cnt[inv.ravel()] == 1]
    loops = np.empty(len(bd), dtype=int)
    for k, (i, j) in enumerate(used[bd]):
        li = seg_loop.get((min(i, j), max(i, j)))
        if li is None:
            raise MeshError("boundary recovery failed: mesh boundary edge is not a segment")
        loops[k] = li
    if len(bd) != len(seg):
        raise MeshError("boundary recovery failed: some segments are missing")
    order = np.lexsort((bd[:, 0], loops))
    corners = {int(remap[v]): a for v, a in pslg.corner_angle.items() if remap[v] >= 0}
    return Mesh(V, T, bd[order], loops[order], pslg.curves, corners)


# ---------------------------------------------------------------------------
# refinement and checks
# ---------------------------------------------------------------------------

def refine(mesh: Mesh) -> Mesh:
    """Split every triangle into four through its edge midpoints.

    Midpoints of boundary edges on analytic loops are moved onto the curve.
    """
    V, T = mesh.vertices, mesh.triangles
    nv = len(V)
    E = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    key = np.sort(E, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    mid = 0.5 * (V[uniq[:, 0]] + V[uniq[:, 1]])
    # boundary edges -> their midpoint index
    bkey = np.sort(mesh.boundary_edges, axis=1)
    lookup = {tuple(e): k for k, e in enumerate(uniq)}
    bmid = np.array([lookup[tuple(e)] for e in bkey], dtype=int)
    for li, curve in enumerate(mesh.curves):
        if curve is None:
            continue
        sel = mesh.edge_loops == li
        if sel.any():
            p = V[mesh.boundary_edges[sel, 0]]
            q = V[mesh.boundary_edges[sel, 1]]
            mid[bmid[sel]] = curve_midpoints(curve, p, q)
    newV = np.concatenate([V, mid])
    nT = len(T)
    m01 = nv + inv[:nT]
    m12 = nv + inv[nT:2 * nT]
    m20 = nv + inv[2 * nT:]
    a, b, c = T[:, 0], T[:, 1], T[:, 2]
    children = np.concatenate([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])
    be = mesh.boundary_edges
    bm = nv + bmid
    newB = np.empty((2 * len(be), 2), dtype=int)
    newB[0::2] = np.column_stack([be[:, 0], bm])
    newB[1::2] = np.column_stack([bm, be[:, 1]])
    newL = np.repeat(mesh.edge_loops, 2)
    return Mesh(newV, children, newB, newL, mesh.curves, dict(mesh.corner_angles))


def mesh_levels(domain: Domain, h: float, levels: int) -> list[Mesh]:
    """A base mesh at ``h`` followed by ``levels - 1`` uniform refinements."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    out = [triangulate(domain, h)]
    for _ in range(levels - 1):
        out.append(refine(out[-1]))
    return out


def check_mesh(mesh: Mesh, min_angle: float = 20.0) -> list[str]:
    """List of violated mesh invariants (empty when the mesh is valid)."""
    problems = []
    V, T = mesh.vertices, mesh.triangles
    if np.any(triangle_areas(V, T) <= 0):
        problems.append("non-positive triangle area")
    E = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    key = np.sort(E, axis=1)
    uniq, cnt = np.unique(key, axis=0, return_counts=True)
    if np.any(cnt > 2):
        problems.append("edge shared by more than two triangles")
    bset = {tuple(e) for e in uniq[cnt == 1]}
    mesh_b = {tuple(sorted(e)) for e in mesh.boundary_edges.tolist()}
    if bset != mesh_b:
        problems.append("boundary edges do not match single-triangle edges")
    if 3 * len(T) != 2 * int((cnt == 2).sum()) + int((cnt == 1).sum()):
        problems.append("edge count relation 3T = 2E_int + E_bnd fails")
    # closed cycles: each boundary vertex has one outgoing and one incoming edge
    be = mesh.boundary_edges
    if not (np.array_equal(np.sort(be[:, 0]), np.sort(be[:, 1]))
            and len(np.unique(be[:, 0])) == len(be)):
        problems.append("boundary edges do not form closed cycles")
    # input corners sharper than 60 degrees lower the floor to their angle;
    # uniform refinement copies the corner triangle's shape to its children
    acute = [a for a in mesh.corner_angles.values() if a < 60.0]
    floor = min([min_angle] + acute)
    amin = float(triangle_angles(V, T).min())
    if amin < floor - 1e-9:
        problems.append(f"minimum angle {amin:.2f} deg below {floor:.2f}")
    return problems


# ---------------------------------------------------------------------------
# plain-text export
# ---------------------------------------------------------------------------

def write_mesh(mesh: Mesh, path) -> None:
    """Vertex count, 'x y' lines, triangle count, 'i j k' lines,
    boundary-edge count, 'i j loop_id' lines."""
    with open(path, "w") as f:
        f.write(f"{mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        f.write(f"{len(mesh.triangles)}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")
        f.write(f"{len(mesh.boundary_edges)}\n")
        for (i, j), li in zip(mesh.boundary_edges, mesh.edge_loops):
            f.write(f"{i} {j} {li}\n")


def read_mesh(path) -> Mesh:
    with open(path) as f:
        lines = [ln.split() for ln in f if ln.strip()]
    pos = 0

    def block(cast):
        nonlocal pos
        n = int(lines[pos][0])
        rows = lines[pos + 1:pos + 1 + n]
        pos += 1 + n
        return np.array(rows, dtype=cast).reshape(n, -1)

    V = block(float)
    T = block(int)
    B = block(int)
    n_loops = int(B[:, 2].max()) + 1 if len(B) else 0
    return Mesh(V, T, B[:, :2].copy(), B[:, 2].copy(), (None,) * n_loops)
