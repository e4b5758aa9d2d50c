from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

import oracles
from torsionlab import fem
from torsionlab.functionals import richardson
from torsionlab.geometry import disk, ellipse, equilateral_triangle, polygon, square
from torsionlab.meshing import mesh_levels, triangulate


@pytest.fixture(scope="module")
def disk_levels():
    return mesh_levels(disk(n_segments=256), 0.06, 2)


@pytest.fixture(scope="module")
def tri_levels():
    return mesh_levels(equilateral_triangle(), 0.04, 2)


@pytest.fixture(scope="module")
def square_levels():
    return mesh_levels(square(), 0.05, 3)


def _center_value(mesh, u, x):
    return float(fem.interpolate(mesh, u.values, np.array([x]))[0])


def test_torsion_examples(disk_levels, tri_levels, square_levels):
    m = disk_levels[-1]
    assert _center_value(m, fem.solve_torsion(m), (0, 0)) == pytest.approx(0.25, rel=5e-3)
    m = tri_levels[-1]
    assert _center_value(m, fem.solve_torsion(m), (0, 0)) == pytest.approx(1 / 36, rel=5e-3)
    m = square_levels[-1]
    assert _center_value(m, fem.solve_torsion(m), (0.5, 0.5)) == \
        pytest.approx(oracles.square_M(), rel=5e-3)


def test_torsion_rigidity_square(square_levels):
    T = [fem.integrate(m, fem.solve_torsion(m).values) for m in square_levels]
    assert richardson(T[-2], T[-1]) == pytest.approx(oracles.square_T(), rel=1e-4)


def test_torsion_boundary_zero_and_nonnegative(tri_levels):
    m = tri_levels[0]
    u = fem.solve_torsion(m)
    assert np.all(u.values[m.boundary_vertices] == 0)
    assert u.values.min() >= -1e-12


def test_screened(square_levels):
    m = square_levels[0]
    u0 = fem.solve_torsion(m)
    assert np.array_equal(fem.solve_screened(m, 0.0).values, u0.values)
    v = 100 * fem.solve_screened(m, 100.0).values
    assert v.max() <= 1 + 1e-10
    assert np.all(v[m.interior_mask] > 0)
    with pytest.raises(ValueError):
        fem.solve_screened(m, -1.0)


def test_screened_large_a_mean():
    m = triangulate(square(), 0.0025)
    v = 1e4 * fem.solve_screened(m, 1e4).values
    assert fem.integrate(m, v) >= 0.95


@pytest.mark.parametrize("which,exact", [("disk", oracles.DISK_LAMBDA),
                                         ("tri", oracles.TRI_LAMBDA),
                                         ("square", oracles.SQUARE_LAMBDA)])
def test_eigenvalues(which, exact, disk_levels, tri_levels, square_levels):
    ms = {"disk": disk_levels, "tri": tri_levels, "square": square_levels}[which]
    lams = [fem.solve_eigenpair(m).lambda1 for m in ms]
    assert richardson(lams[-2], lams[-1]) == pytest.approx(exact, rel=5e-3)
    if which != "disk":
        # conforming Rayleigh bound, monotone under refinement
        assert all(l >= exact for l in lams)
        assert all(a > b for a, b in zip(lams, lams[1:]))


def test_eigenpair_invariants(tri_levels):
    m = tri_levels[0]
    e = fem.solve_eigenpair(m)
    K, M = fem.stiffness(m), fem.mass(m)
    phi = e.phi.values
    assert phi @ (M @ phi) == pytest.approx(1, rel=1e-12)
    assert (phi @ (K @ phi)) / (phi @ (M @ phi)) == pytest.approx(e.lambda1, rel=1e-10)
    assert phi.min() >= -1e-10
    assert np.all(phi[m.boundary_vertices] == 0)


def test_lanczos_matches_inverse(tri_levels):
    m = tri_levels[0]
    a = fem.solve_eigenpair(m).lambda1
    b = fem.solve_eigenpair(m, method="lanczos").lambda1
    assert a == pytest.approx(b, rel=1e-9)


def test_eigen_cap_reported():
    m = triangulate(square(), 0.1)
    with pytest.raises(fem.SolverError, match="cap"):
        fem.solve_eigenpair(m, maxiter=1, tol=1e-16)


def test_green_disk(disk_levels):
    m = disk_levels[-1]
    g = fem.solve_green(m, (0.0, 0.0))
    assert np.abs(g.regular_part.values).max() <= 1e-3
    f = fem.green_flux(m, g)
    assert f.integral() == pytest.approx(-1, abs=1e-8)
    assert np.abs(f.values * 2 * math.pi + 1).max() <= 0.01
    with pytest.raises(ValueError):
        fem.solve_green(m, (0.99, 0.0))
    with pytest.raises(ValueError):
        fem.solve_green(m, (2.0, 0.0))


def test_green_regular_part_harmonic(tri_levels):
    m = tri_levels[0]
    g = fem.solve_green(m, (0.05, -0.02))
    K = fem.stiffness(m)
    r = (K @ g.regular_part.values)[m.interior_mask]
    assert np.abs(r).max() <= 1e-10 * np.abs(g.regular_part.values).max()
    # phi vanishes at boundary vertices
    vb = g.vertex_values()[m.boundary_vertices]
    assert np.abs(vb).max() <= 1e-12


def test_disk_fluxes(disk_levels):
    m = disk_levels[-1]
    u = fem.solve_torsion(m)
    du = fem.boundary_flux(m, u, fem.Source.torsion())
    assert np.abs(du.values + 0.5).max() <= 0.005
    e = fem.solve_eigenpair(m)
    dphi = fem.boundary_flux(m, e.phi, fem.Source.eigen(e.lambda1))
    target = -oracles.J01 / math.sqrt(math.pi)
    assert np.abs(dphi.values / target - 1).max() <= 0.01


def test_flux_mesh_mismatch(disk_levels, tri_levels):
    u = fem.solve_torsion(disk_levels[0])
    with pytest.raises(ValueError):
        fem.boundary_flux(tri_levels[0], u, "torsion")


def _poly(seed, n):
    rng = np.random.default_rng(seed)
    ang = 2 * np.pi * (np.arange(n) + rng.uniform(0, 0.8, n)) / n
    r = rng.uniform(0.8, 1.2, n)
    return polygon(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))


@settings(max_examples=10)
@given(st.integers(0, 10_000), st.integers(4, 8))
def test_flux_identity(seed, n):
    d = _poly(seed, n)
    m = triangulate(d, 0.15)
    u = fem.solve_torsion(m)
    f = fem.boundary_flux(m, u, "torsion")
    assert f.integral() == pytest.approx(-m.areas.sum(), abs=1e-10)
    # the nodal trace reproduces the residual against every boundary hat
    e = fem.solve_eigenpair(m)
    fe = fem.boundary_flux(m, e.phi, fem.Source.eigen(e.lambda1))
    M = fem.mass(m)
    assert fe.integral() == pytest.approx(-e.lambda1 * (np.ones(m.n_vertices) @ (M @ e.phi.values)),
                                          rel=1e-10)


@settings(max_examples=10)
@given(st.integers(0, 10_000), st.integers(4, 8))
def test_orthogonality_identity(seed, n):
    m = triangulate(_poly(seed, n), 0.15)
    u = fem.solve_torsion(m).values
    e = fem.solve_eigenpair(m)
    M = fem.mass(m)
    phi = e.phi.values
    lhs = np.ones(m.n_vertices) @ (M @ phi)
    rhs = e.lambda1 * (u @ (M @ phi))
    assert lhs == pytest.approx(rhs, rel=1e-8)


@settings(max_examples=10)
@given(st.integers(0, 10_000), st.integers(4, 8), st.floats(0.05, 5))
def test_green_flux_total(seed, n, scale):
    d = _poly(seed, n)
    m = triangulate(d, 0.15).transformed(scale)
    x0 = np.mean(m.vertices[m.boundary_vertices], axis=0) * 0.1
    assume(fem._boundary_distance(m, np.array([x0]))[0] > 2 * m.h)
    g = fem.solve_green(m, x0)
    assert fem.green_flux(m, g).integral() == pytest.approx(-1, abs=1e-8)


@settings(max_examples=10)
@given(st.integers(0, 10_000), st.floats(0.01, 100), st.floats(-10, 10), st.floats(0, 6.3))
def test_scale_equivariance(seed, t, shift, rot):
    m = triangulate(_poly(seed, 6), 0.2)
    mt = m.transformed(t, (shift, -shift), rot)
    assert np.allclose(fem.stiffness(mt).toarray(), fem.stiffness(m).toarray(), rtol=1e-12, atol=1e-12)
    u, ut = fem.solve_torsion(m).values, fem.solve_torsion(mt).values
    assert np.abs(ut - t * t * u).max() <= 1e-12 * t * t * np.abs(u).max()
    lam, lamt = fem.solve_eigenpair(m).lambda1, fem.solve_eigenpair(mt).lambda1
    assert lamt * t * t == pytest.approx(lam, rel=1e-12)


def test_domain_monotonicity():
    # ellipse(1.2, 1) contains the unit disk: smaller eigenvalue, larger torsion
    lam = []
    M = []
    for d in (disk(n_segments=128), ellipse(1.2, 1.0, 128)):
        ms = mesh_levels(d, 0.08, 2)
        ls = [fem.solve_eigenpair(m).lambda1 for m in ms]
        lam.append(richardson(*ls))
        M.append(fem.solve_torsion(ms[-1]).values.max())
    assert lam[1] < lam[0]
    assert M[1] > M[0]


def test_vertex_gradients_linear():
    m = triangulate(square(), 0.1)
    v = 2 * m.vertices[:, 0] - 3 * m.vertices[:, 1]
    assert np.allclose(fem.vertex_gradients(m, v), [2, -3], atol=1e-12)


def test_field_export(tmp_path):
    from torsionlab.output import field_svg, write_field
    m = triangulate(square(), 0.2)
    u = fem.solve_torsion(m)
    write_field(tmp_path / "u.txt", u.values)
    rows = (tmp_path / "u.txt").read_text().splitlines()
    assert len(rows) == m.n_vertices and rows[0].split()[0] == "0"
    field_svg(tmp_path / "u.svg", m, u.values)
    assert (tmp_path / "u.svg").read_text().startswith("<?xml")
