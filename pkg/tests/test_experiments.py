from __future__ import annotations

import math

import numpy as np
import pytest

import oracles
from torsionlab import experiments as ex
from torsionlab.geometry import square


def test_triangle_integrals():
    q = ex.triangle_integrals()
    assert q["I0"] == pytest.approx(oracles.I0, abs=1e-10)
    assert q["I2"] == pytest.approx(oracles.I2, abs=1e-10)
    assert q["I4"] == pytest.approx(oracles.I4, abs=1e-10)
    assert q["tau"] + q["sigma"] / 27 == pytest.approx(oracles.TAU_SIGMA, abs=1e-8)
    assert q["tau"] == pytest.approx(q["tau_factored"], abs=1e-10)


def test_polynomial_factorization():
    x = np.linspace(-2, 2, 41)
    assert np.abs(ex.P_poly(x) - ex.P_factored(x)).max() < 1e-13


def test_triangle_study_table(tmp_path):
    st = ex.run_triangle_criticality()
    assert st.passed
    assert st.summary["tau_plus_sigma_over_27"] == pytest.approx(oracles.TAU_SIGMA, abs=1e-8)
    assert all(r.provenance in ("paper", "derived", "trivial") for r in st.rows)
    d = st.write(tmp_path / "tc")
    for f in ("table.csv", "summary.json", "plot.svg"):
        assert (d / f).exists()


@pytest.mark.parametrize("n,F", [(1, 0.5), (16, 0.2), (81, 0.1)])
def test_cluster_closed_form(n, F):
    assert ex.cluster_F_exact(n) == pytest.approx(F, rel=1e-14)
    assert oracles.cluster_F(n) == pytest.approx(F, rel=1e-14)


def test_boundary_layer_guard():
    assert ex.boundary_layer_h(1e4) == pytest.approx(0.0025)
    with pytest.raises(ValueError, match="needs"):
        ex.screened_functionals(square(), 1e4, 0.05, 2)
    with pytest.raises(ValueError, match="minimum"):
        ex.run_homogenized_study(square(), (1e6,))


def test_screened_small_a_close_to_torsion():
    r = ex.screened_functionals(square(), 1e-6, 0.05, 2, lambda1=2 * math.pi**2)
    F_sq = oracles.square_T() / oracles.square_M()
    assert r.F_hat == pytest.approx(F_sq, rel=1e-3)


def test_screened_bounds_a100():
    r = ex.screened_functionals(square(), 100.0, 0.05, 2, lambda1=2 * math.pi**2)
    assert r.vertex_max_av <= 1 + 1e-10
    assert r.G_hat <= 1 + 2 * math.pi**2 / 100 + 1e-3


def test_pmap_parallel_matches_serial():
    items = [1, 2, 3, 4]
    assert ex.pmap(math.sqrt, items, workers=2) == [math.sqrt(i) for i in items]


def test_study_rows_validation():
    st = ex.StudyTable("t")
    st.add(1, "q", 0.5, "1", -0.1, 0.05, "paper")
    st.add(2, "q", 0.5, "1", -0.01, 0.05, "paper")
    assert [r.status for r in st.rows] == ["fail", "pass"]
    assert not st.passed and len(st.failures()) == 1


def test_rectangle_rejects_small_n():
    with pytest.raises(ValueError):
        ex.run_rectangle_study((1,))


def test_byte_identical_reruns(tmp_path):
    for k in range(2):
        ex.run_league_table(("triangle", "square"), h=0.1, workers=1 + k).write(tmp_path / str(k))
        ex.run_triangle_criticality().write(tmp_path / f"tc{k}")
    for name in ("table.csv", "summary.json", "plot.svg"):
        assert (tmp_path / "0" / name).read_bytes() == (tmp_path / "1" / name).read_bytes()
        assert (tmp_path / "tc0" / name).read_bytes() == (tmp_path / "tc1" / name).read_bytes()


def test_perforated_small():
    st = ex.run_perforated_study(square(), (0.15,), 0.05, h=0.05)
    rows = st.summary["rows"]
    assert rows[0]["holes"] == 4
    assert st.summary["a"] == pytest.approx(10 * math.pi)
    assert st.passed   # M(perforated) <= M(base)
