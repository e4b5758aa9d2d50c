from __future__ import annotations

import math

import numpy as np

from torsionlab.output import dumps, fmt, write_csv


def test_fmt_round_trips():
    for x in (math.pi, 1 / 3, 1e-300, -2.5e17):
        assert float(fmt(x)) == x
    assert fmt(np.float64(0.1)) == "0.10000000000000001"
    assert fmt(True) == "true" and fmt(np.int64(3)) == "3"


def test_dumps_non_finite_null():
    s = dumps({"a": float("nan"), "b": [1.0, float("inf")], "c": "x"})
    assert '"a": null' in s and "null\n" in s and '"c": "x"' in s


def test_csv_lines(tmp_path):
    write_csv(tmp_path / "t.csv", ["a", "b"], [(1, 0.5), ("x", math.e)])
    assert (tmp_path / "t.csv").read_text() == "a,b\n1,0.5\nx,2.7182818284590451\n"
