"""Deterministic writers for CSV, JSON and SVG artifacts.

Floats are written with 17 significant digits so that reruns can be
compared byte for byte; SVG output has its hash salt fixed and no date.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

SVG_SALT = "torsionlab"


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def _json(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        return format(x, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}{_json(str(k), indent, level + 1)}: {_json(v, indent, level + 1)}'
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        items = [pad + _json(v, indent, level + 1) for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with 17-significant-digit floats (non-finite -> null)."""
    return _json(obj, indent, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = SVG_SALT
    return plt


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def line_plot(path, x, series: dict, hlines: dict | None = None, title: str = "",
              xlabel: str = "", ylabel: str = "", logx: bool = False) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, y in series.items():
        ax.plot(x, y, "o-", label=name)
    for name, y in (hlines or {}).items():
        ax.axhline(y, ls="--", lw=1, color="gray")
        ax.annotate(name, (0.01, y), xycoords=("axes fraction", "data"), fontsize=8)
    if logx:
        ax.set_xscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if series:
        ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def write_field(path, values) -> None:
    """Plain 'vertex_index value' table."""
    with open(path, "w") as f:
        for i, v in enumerate(np.asarray(values)):
            f.write(f"{i} {fmt(float(v))}\n")


def field_svg(path, mesh, values, title: str = "") -> None:
    """Heat map of a vertex field with the boundary drawn on top."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 5))
    V = mesh.vertices
    tp = ax.tripcolor(V[:, 0], V[:, 1], mesh.triangles, np.asarray(values),
                      shading="gouraud", cmap="viridis")
    for i, j in mesh.boundary_edges:
        ax.plot(V[[i, j], 0], V[[i, j], 1], "k-", lw=0.8)
    fig.colorbar(tp, ax=ax)
    ax.set_aspect("equal")
    ax.set_title(title)
    _save(fig, path)
    plt.close(fig)


def boundary_arclength(mesh, loop: int = 0):
    """Edge indices of one loop in traversal order and the arc-length
    parameter of their midpoints."""
    be = mesh.boundary_edges
    idx = np.flatnonzero(mesh.edge_loops == loop)
    start_of = {int(be[k, 0]): int(k) for k in idx}
    k = int(idx[0])
    order = []
    for _ in range(len(idx)):
        order.append(k)
        k = start_of[int(be[k, 1])]
    order = np.asarray(order)
    L, _, _ = mesh.edge_geometry()
    s = np.cumsum(L[order]) - 0.5 * L[order]
    return order, s


def residual_csv(path, mesh, field) -> None:
    """(loop, arc length, value) for every boundary edge."""
    rows = []
    for loop in np.unique(mesh.edge_loops):
        order, s = boundary_arclength(mesh, int(loop))
        rows.extend((int(loop), si, field.values[k]) for k, si in zip(order, s))
    write_csv(path, ["loop", "arclength", "value"], rows)


def residual_svg(path, mesh, field, title: str = "") -> None:
    """Boundary edges coloured by an edgewise field."""
    plt = _pyplot()
    from matplotlib.collections import LineCollection
    fig, ax = plt.subplots(figsize=(6, 5))
    V = mesh.vertices
    segs = V[mesh.boundary_edges]
    lc = LineCollection(segs, cmap="coolwarm", linewidths=3)
    lc.set_array(np.asarray(field.values))
    ax.add_collection(lc)
    ax.autoscale()
    ax.set_aspect("equal")
    fig.colorbar(lc, ax=ax)
    ax.set_title(title)
    _save(fig, path)
    plt.close(fig)


def polygon_svg(path, vertices, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4, 4))
    P = np.asarray(vertices)
    Q = np.vstack([P, P[:1]])
    ax.fill(Q[:, 0], Q[:, 1], alpha=0.3)
    ax.plot(Q[:, 0], Q[:, 1], "k-")
    ax.set_aspect("equal")
    ax.set_title(title)
    _save(fig, path)
    plt.close(fig)
