"""Command-line interface.

    torsionlab report --domain triangle --h 0.02 --levels 3
    torsionlab study triangle-crit
    torsionlab derivative --domain ellipse:2,1 --field translate-x

Settings may come from an INI file (``--config``) with sections ``[run]``,
``[study]`` and ``[tolerances]``; command-line flags override file values.
Every run writes its artifacts (CSV, JSON, SVG) to ``--out``.

Exit codes: 0 success, 1 failed acceptance check (with ``--assert``),
2 input error.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import experiments, fem, output
from .functionals import bound_audit, functional_report
from .geometry import GeometryError, NotApplicable, build_domain
from .meshing import MeshError, mesh_levels, write_mesh
from .optimizer import gradient_check, maximize_G, normalize, regular_polygon
from .shape_calculus import (ShapeVelocity, derivative_from_state, field_state,
                             residual_summary, topological_field)
from .shape_calculus import EXTENDED_NOTE
from .geometry import geometry_report

CONFIG_VERSION = 1
log = logging.getLogger("torsionlab")


class InputError(ValueError):
    pass


@dataclass
class RunConfig:
    domain: str = "triangle"
    h: float = 0.05
    levels: int = 2
    out: str = "torsionlab-out"
    workers: int = 1
    study: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.levels < 2:
            raise InputError("levels must be >= 2")
        if not self.h > 0:
            raise InputError("h must be positive")
        if self.workers < 1:
            raise InputError("workers must be >= 1")
        for k, v in self.tolerances.items():
            if not v > 0:
                raise InputError(f"tolerance {k} must be positive")
        return self


def _floats(s) -> list[float]:
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    return [_num(x) for x in str(s).replace(";", ",").split(",") if x.strip()]


def _num(x) -> float:
    x = str(x).strip()
    if "/" in x:
        a, b = x.split("/")
        return float(a) / float(b)
    return float(x)


def load_config(path) -> RunConfig:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise InputError(f"cannot read config file {path}")
    cfg = RunConfig()
    if cp.has_section("run"):
        r = cp["run"]
        ver = r.getint("version", CONFIG_VERSION)
        if ver != CONFIG_VERSION:
            raise InputError(f"unsupported config version {ver}")
        cfg.domain = r.get("domain", cfg.domain)
        cfg.h = r.getfloat("h", cfg.h)
        cfg.levels = r.getint("levels", cfg.levels)
        cfg.out = r.get("out", cfg.out)
        cfg.workers = r.getint("workers", cfg.workers)
    if cp.has_section("study"):
        cfg.study = dict(cp["study"])
    if cp.has_section("tolerances"):
        try:
            cfg.tolerances = {k: float(v) for k, v in cp["tolerances"].items()}
        except ValueError as e:
            raise InputError(f"malformed tolerance: {e}") from None
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _outdir(cfg: RunConfig, name: str) -> Path:
    d = Path(cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_report(cfg, args) -> int:
    dom = build_domain(cfg.domain)
    rep = functional_report(dom, cfg.h, cfg.levels, eigen_method=args.eigen_method)
    d = _outdir(cfg, "report")
    output.write_csv(d / "table.csv", ["h", "T", "M", "lambda1"], rep.table)
    summ = rep.as_dict()
    output.write_json(d / "summary.json", summ)
    hs = [r[0] for r in rep.table]
    output.line_plot(d / "plot.svg", hs, {"G_h": rep.level_values("G"), "F_h": rep.level_values("F")},
                     {"G extrapolated": rep.G, "F extrapolated": rep.F}, title=dom.label,
                     xlabel="h", logx=True)
    sys.stdout.write(output.dumps(summ))
    return 0


def cmd_audit(cfg, args) -> int:
    dom = build_domain(cfg.domain)
    rep = functional_report(dom, cfg.h, cfg.levels, eigen_method=args.eigen_method)
    checks = bound_audit(dom, rep, allowance=cfg.tolerances.get("allowance", 0.005))
    d = _outdir(cfg, "audit")
    output.write_csv(d / "table.csv", ["name", "inequality", "margin", "status"],
                     [(c.name, c.inequality, c.margin, c.status) for c in checks])
    summ = {"report": rep.as_dict(),
            "checks": [{"name": c.name, "inequality": c.inequality, "margin": c.margin,
                        "status": c.status} for c in checks]}
    output.write_json(d / "summary.json", summ)
    names = [c.name for c in checks if math.isfinite(c.margin)]
    output.line_plot(d / "plot.svg", list(range(len(names))),
                     {"margin": [c.margin for c in checks if math.isfinite(c.margin)]},
                     {"0": 0.0}, title=f"audit {dom.label}", xlabel=", ".join(names))
    for c in checks:
        print(f"{c.status:24s} {c.name:20s} margin {output.fmt(c.margin)}")
    failed = any(c.status == "violated" for c in checks)
    return 1 if (failed and args.assert_) else 0


def _state(cfg, args):
    dom = build_domain(cfg.domain)
    meshes = mesh_levels(dom, cfg.h, args.refinements + 1)
    return dom, field_state(meshes[-1])


def cmd_residual(cfg, args) -> int:
    dom, st = _state(cfg, args)
    rho = st.rho
    summ = residual_summary(st)
    d = _outdir(cfg, "residual")
    output.residual_csv(d / "table.csv", st.mesh, rho)
    output.residual_svg(d / "plot.svg", st.mesh, rho, title=f"optimality residual, {dom.label}")
    res = {"domain": dom.label, "h": st.mesh.h, "M": st.M, "lambda1": st.lam,
           "x0": list(st.maxpoint.x0), "sup_normalized": summ.sup_normalized,
           "mean_normalized": summ.mean_normalized, "translation_moment": list(summ.translation),
           "dilation_moment": summ.dilation, "green_flux_total": st.dgreen.integral()}
    output.write_json(d / "summary.json", res)
    sys.stdout.write(output.dumps(res))
    tol = cfg.tolerances.get("residual_sup")
    if args.assert_ and tol is not None and summ.sup_normalized > tol:
        return 1
    return 0


def cmd_derivative(cfg, args) -> int:
    dom, st = _state(cfg, args)
    c = st.maxpoint.x0 if args.center == "x0" else (0.0, 0.0)
    V = ShapeVelocity.named(args.field, center=c)
    note = "" if geometry_report(dom).convex else EXTENDED_NOTE
    rep = derivative_from_state(st, V, note)
    d = _outdir(cfg, "derivative")
    res = {"domain": dom.label, "field": args.field, "G_prime": rep.G_prime, "G": rep.G,
           "M_prime": rep.M_prime, "lambda_prime": rep.lambda_prime,
           "decomposition": list(rep.decomposition), "note": rep.note}
    output.write_json(d / "summary.json", res)
    output.residual_csv(d / "table.csv", st.mesh, rep.residual_field)
    output.residual_svg(d / "plot.svg", st.mesh, rep.residual_field, title=f"rho, {dom.label}")
    sys.stdout.write(output.dumps(res))
    tol = cfg.tolerances.get("derivative_rel")
    if args.assert_ and tol is not None and abs(rep.G_prime) > tol * rep.G:
        return 1
    return 0


def _points(s) -> np.ndarray:
    try:
        pts = [tuple(_num(v) for v in p.split(",")) for p in s.split(";") if p.strip()]
        arr = np.array(pts, dtype=float)
    except ValueError:
        raise InputError(f"malformed point list {s!r}") from None
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InputError(f"malformed point list {s!r}")
    return arr


def cmd_topo(cfg, args) -> int:
    dom = build_domain(cfg.domain)
    pts = _points(args.points)
    R = topological_field(dom, pts, cfg.h, cfg.levels, swap=args.swap)
    d = _outdir(cfg, "topo")
    output.write_csv(d / "table.csv", ["x", "y", "R"], [(p[0], p[1], r) for p, r in zip(pts, R)])
    res = {"domain": dom.label, "points": pts.tolist(), "R": R, "swap": args.swap}
    output.write_json(d / "summary.json", res)
    output.line_plot(d / "plot.svg", list(range(len(R))), {"R": R}, {"0": 0.0},
                     title=f"R(x), {dom.label}", xlabel="point index")
    sys.stdout.write(output.dumps(res))
    return 0


def cmd_study(cfg, args) -> int:
    s = dict(cfg.study)
    for k in ("n_list", "a_list", "eps_list", "C0", "domains"):
        v = getattr(args, k, None)
        if v is not None:
            s[k] = v
    name = args.name
    w = cfg.workers
    h = args.h  # only explicit values override study defaults
    kw = {} if h is None else {"h": h}
    lv = {} if args.levels is None else {"levels": args.levels}
    if name == "rectangle":
        st = experiments.run_rectangle_study([int(x) for x in _floats(s.get("n_list", "5,10,50"))],
                                             workers=w, **kw, **lv)
    elif name == "cluster":
        st = experiments.run_cluster_study([int(x) for x in _floats(s.get("n_list", "1,16,81"))],
                                           workers=w, **kw, **lv)
    elif name == "homog":
        base = build_domain(s.get("base", "square"))
        st = experiments.run_homogenized_study(base, _floats(s.get("a_list", "100,1000,10000")),
                                               workers=w, **lv)
    elif name == "perforated":
        base = build_domain(s.get("base", "square"))
        st = experiments.run_perforated_study(base, _floats(s.get("eps_list", "0.15,0.125")),
                                              float(_num(s.get("C0", 0.05))), workers=w, **kw, **lv)
    elif name == "triangle-crit":
        st = experiments.run_triangle_criticality()
    elif name == "league":
        doms = [x.strip() for x in str(s.get("domains", "triangle|square|disk:512")).split("|")]
        st = experiments.run_league_table(doms, workers=w, **kw, **lv)
    else:  # argparse restricts the choices
        raise InputError(f"unknown study {name}")
    d = st.write(Path(cfg.out))
    for r in st.rows:
        print(f"{r.status:5s} {str(r.parameter):>10s} {r.quantity:32s} {output.fmt(r.measured)}")
    print(f"study {st.name}: {'PASS' if st.passed else 'FAIL'} -> {d}")
    return 1 if (args.assert_ and not st.passed) else 0


SEEDS = {
    "triangle": lambda: regular_polygon(3),
    "square": lambda: regular_polygon(4),
    "hexagon": lambda: regular_polygon(6),
    "rect3": lambda: normalize([(0, 0), (3, 0), (3, 1), (0, 1)]),
}


def _seed(spec: str) -> np.ndarray:
    if spec in SEEDS:
        return SEEDS[spec]()
    if spec.startswith("regular:"):
        return regular_polygon(int(spec.split(":")[1]))
    if spec.startswith("polygon:"):
        return normalize(_points(spec.split(":", 1)[1]))
    raise InputError(f"unknown seed {spec!r}")


def cmd_optimize(cfg, args) -> int:
    P = _seed(args.seed)
    h = args.h if args.h is not None else 0.06
    trace = maximize_G(len(P), P, args.max_iters, h=h, levels=cfg.levels)
    d = _outdir(cfg, "optimize")
    res = trace.as_dict()
    if args.check_gradient:
        res["gradient_check"] = [list(x) for x in gradient_check(trace.best, h=min(h, 0.04))]
    output.write_json(d / "summary.json", res)
    output.write_csv(d / "table.csv", ["iterate", "G", "grad_norm", "step"],
                     [(k, it.G, it.grad_norm, it.step) for k, it in enumerate(trace.iterates)])
    frames = d / "frames"
    frames.mkdir(exist_ok=True)
    for k, it in enumerate(trace.iterates):
        output.polygon_svg(frames / f"iterate_{k:03d}.svg", it.vertices, f"G = {it.G:.6f}")
    output.line_plot(d / "plot.svg", list(range(len(trace.iterates))),
                     {"G": [it.G for it in trace.iterates]},
                     {"4 pi^2/27": 4 * math.pi**2 / 27}, title="ascent", xlabel="iterate")
    with open(d / "final.txt", "w") as f:
        for x, y in trace.best:
            f.write(f"{output.fmt(x)} {output.fmt(y)}\n")
    print(f"{trace.status}: best G = {output.fmt(trace.best_G)} after {len(trace.iterates) - 1} steps")
    return 0


def cmd_mesh_export(cfg, args) -> int:
    dom = build_domain(cfg.domain)
    mesh = mesh_levels(dom, cfg.h, args.refinements + 1)[-1]
    d = _outdir(cfg, "mesh")
    path = d / (args.name or "mesh.txt")
    write_mesh(mesh, path)
    if args.field:
        u = fem.solve_torsion(mesh)
        output.write_field(d / "torsion.txt", u.values)
        output.field_svg(d / "torsion.svg", mesh, u.values, title=f"torsion, {dom.label}")
    print(f"{mesh.n_vertices} vertices, {len(mesh.triangles)} triangles -> {path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [run], [study], [tolerances]")
    common.add_argument("--domain", help="domain spec, e.g. triangle, disk:512, ellipse:2,1")
    common.add_argument("--h", type=float, help="base mesh size")
    common.add_argument("--levels", type=int, help="number of mesh levels (>= 2)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    common.add_argument("--assert", dest="assert_", action="store_true",
                        help="exit 1 when an acceptance check fails")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="torsionlab", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    for name in ("report", "audit"):
        sp_ = sub.add_parser(name, parents=[common])
        sp_.add_argument("--eigen-method", default="inverse", choices=["inverse", "lanczos"])
    for name in ("residual", "derivative"):
        sp_ = sub.add_parser(name, parents=[common])
        sp_.add_argument("--refinements", type=int, default=1)
        if name == "derivative":
            sp_.add_argument("--field", default="translate-x",
                             choices=["translate-x", "translate-y", "dilation", "squeeze", "rotation"])
            sp_.add_argument("--center", default="origin", choices=["origin", "x0"])
    t = sub.add_parser("topo", parents=[common])
    t.add_argument("--points", required=True, help="'x,y;x,y;...'")
    t.add_argument("--swap", action="store_true", help="exchange Green function roles")
    s = sub.add_parser("study", parents=[common])
    s.add_argument("name", choices=["rectangle", "cluster", "homog", "perforated",
                                    "triangle-crit", "league"])
    s.add_argument("--n-list", dest="n_list")
    s.add_argument("--a-list", dest="a_list")
    s.add_argument("--eps-list", dest="eps_list")
    s.add_argument("--C0", dest="C0")
    s.add_argument("--domains", help="'|'-separated domain specs")
    o = sub.add_parser("optimize", parents=[common])
    o.add_argument("--seed", default="rect3", help="triangle, square, hexagon, rect3, regular:N, polygon:...")
    o.add_argument("--max-iters", type=int, default=20)
    o.add_argument("--check-gradient", action="store_true")
    m = sub.add_parser("mesh-export", parents=[common])
    m.add_argument("--refinements", type=int, default=0)
    m.add_argument("--name")
    m.add_argument("--field", action="store_true", help="also export the torsion function")
    return p


COMMANDS = {
    "report": cmd_report, "audit": cmd_audit, "residual": cmd_residual,
    "derivative": cmd_derivative, "topo": cmd_topo, "study": cmd_study,
    "optimize": cmd_optimize, "mesh-export": cmd_mesh_export,
}


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig(workers=os.cpu_count() or 1)
    if args.domain is not None:
        cfg.domain = args.domain
    if args.levels is not None:
        cfg.levels = args.levels
    if args.out is not None:
        cfg.out = args.out
    elif not args.config:
        cfg.out = os.path.join("torsionlab-out", args.command)
    if args.workers is not None:
        cfg.workers = args.workers
    if args.h is not None:
        cfg.h = args.h
    return cfg.validate()


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg, args)
    except (InputError, GeometryError, NotApplicable, MeshError) as e:
        print(f"torsionlab: error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"torsionlab: error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
