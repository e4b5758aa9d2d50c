from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torsionlab.geometry import (PerforationParams, disk, equilateral_triangle, perforated,
                                 polygon, rectangle, square)
from torsionlab.meshing import (MeshError, check_mesh, mesh_levels, read_mesh, refine,
                                triangle_areas, triangulate, write_mesh)


def test_square_mesh():
    m = triangulate(square(), 0.1)
    assert m.h <= 0.1
    assert triangle_areas(m.vertices, m.triangles).sum() == pytest.approx(1, abs=1e-12)
    assert check_mesh(m) == []


def test_rectangle_boundary():
    m = triangulate(rectangle(5), 0.05)
    assert m.areas.sum() == pytest.approx(10, abs=1e-12)
    B = m.vertices[m.boundary_vertices]
    on = np.isclose(B[:, 1], 0) | np.isclose(B[:, 1], 1) | np.isclose(np.abs(B[:, 0]), 5)
    assert on.all()


def test_perforated_hole_loops():
    d = perforated(square(), PerforationParams(1 / 8, 0.05))
    m = triangulate(d, 0.01)
    assert len(np.unique(m.edge_loops)) == 17
    assert check_mesh(m) == []


def test_refine_counts_and_area():
    m = triangulate(square(), 0.1)
    r = refine(m)
    assert len(r.triangles) == 4 * len(m.triangles)
    assert r.areas.sum() == pytest.approx(1, abs=1e-12)
    rr = refine(r)
    assert len(rr.triangles) == 16 * len(m.triangles)
    assert rr.h == pytest.approx(m.h / 4, rel=1e-12)
    assert check_mesh(rr) == []


def test_disk_snapping():
    m = refine(triangulate(disk(n_segments=64), 0.2))
    B = m.vertices[m.boundary_vertices]
    assert np.abs(np.hypot(B[:, 0], B[:, 1]) - 1).max() < 1e-12


def test_unresolved_feature():
    d = perforated(square(), PerforationParams(1 / 8, 0.05))
    with pytest.raises(MeshError, match="loop"):
        triangulate(d, 0.2)


def test_determinism():
    a = triangulate(equilateral_triangle(), 0.05)
    b = triangulate(equilateral_triangle(), 0.05)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)


def test_export_roundtrip(tmp_path):
    m = triangulate(equilateral_triangle(), 0.1)
    write_mesh(m, tmp_path / "m.txt")
    r = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(r.vertices, m.vertices)
    assert np.array_equal(r.triangles, m.triangles)
    assert np.array_equal(r.boundary_edges, m.boundary_edges)
    assert np.array_equal(r.edge_loops, m.edge_loops)


@settings(max_examples=10)
@given(st.integers(0, 10_000), st.integers(3, 9))
def test_random_convex_polygons_mesh_cleanly(seed, n):
    rng = np.random.default_rng(seed)
    ang = 2 * np.pi * (np.arange(n) + rng.uniform(0, 0.8, n)) / n
    P = np.column_stack([np.cos(ang), np.sin(ang)])
    e, f = P[1] - P[0], P[2] - P[0]
    if abs(e[0] * f[1] - e[1] * f[0]) < 0.05:
        return
    levels = mesh_levels(polygon(P), 0.15, 2)
    for m in levels:
        assert check_mesh(m) == []
        assert m.areas.sum() == pytest.approx(polygon(P).loops[0].signed_area, rel=1e-12)
    assert levels[1].h == pytest.approx(levels[0].h / 2, rel=1e-12)
