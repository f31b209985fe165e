"""Command line interface: configured analyses with delimited, mesh, and
figure artifacts.

Subcommands
    analyze         rest points, indices, adapted rates, connection graph
    manifold        local invariant-manifold graph with convergence trace
    transversality  intersection-angle scan over sampled orbits
    cellmap         sampled closed-ball characteristic map of a top cell
    counterexample  alternating-limit witness report
    juxt            juxtaposed-flow group-law residual tables

One JSON configuration file (validated against the shipped
config_schema.json before anything runs) drives every subcommand; the
command picks its own analysis section out of it.  CSV and JSON
artifacts are byte-identical across runs with the same configuration
and --seed.

Exit codes: 0 success, 2 configuration or validation error, 3 failed
computation (a diagnostics.json describing the failure is written to
the output directory in that case).
"""

import argparse
import importlib.resources
import json
import math
import sys as _sys
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import figures, reports
from .boundaryflow import (BoundaryFlowAssembly, ChartDefect, OmegaFailure,
                           ThetaDomainError, assembly_for)
from .cellmap import build_psi, cell_map, continuity_report, polar_mesh
from .counterexample import (PerturbationError, PerturbationSpec,
                             SingularSetError, UnresolvedOrbitError,
                             axis_equilibria, build_f3d, noncell_witness)
from .equilibria import (AdaptedFrame, NonHyperbolicError, adapted_norm,
                         classify, connection_graph, find_critical_points)
from .flow import (FlowError, FlowSystem, flow_map, integrate_trajectory,
                   refine_equilibrium)
from .foliation import FoliationDomainError
from .graphtransform import (NoConvergence, tangent_space_at,
                             unstable_manifold_local)
from .juxtapose import (CompositionDomainError, EntranceTimeError, LocalFlow,
                        PreconditionViolation, SetPredicate,
                        group_law_residual, juxtapose)
from .systems import (ReferenceSystem, linear_saddle, quad_saddle,
                      sphere_height, square4)
from .transversality import transversality_scan

__all__ = ["main", "load_config", "build_system", "ConfigError"]


class ConfigError(Exception):
    """Anything wrong with the configuration or the request itself."""


class ComputeError(RuntimeError):
    """A computation could not produce its artifact."""


_NUMERICAL_ERRORS = (
    ComputeError, FlowError, NonHyperbolicError, NoConvergence,
    ChartDefect, ThetaDomainError, OmegaFailure, EntranceTimeError,
    PreconditionViolation, CompositionDomainError, FoliationDomainError,
    PerturbationError, SingularSetError, UnresolvedOrbitError,
    np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError,
    ValueError, RuntimeError,
)

_BUILTIN_FACTORIES = {
    "linear_saddle": linear_saddle,
    "quad_saddle": quad_saddle,
    "square4": square4,
    "sphere_height": sphere_height,
}

_DEFAULT_BOX = {
    "linear_saddle": [[-2.0, 2.0], [-2.0, 2.0]],
    "quad_saddle": [[-2.0, 2.0], [-2.0, 2.0]],
    "square4": [[-1.5, 1.5], [-1.5, 1.5]],
    "sphere_height": [[-1.2, 1.2], [-1.2, 1.2], [-1.2, 1.2]],
    "f3d": [[-1.5, 1.5], [-1.5, 1.5], [-4.0, 4.0]],
}

# the z-axis rest points at z = +-1 sit where the seeding grid of the
# coarser default resolution has no nearby basin
_DEFAULT_RESOLUTION = {"f3d": 7}

_DEFAULT_FORMATS = ("csv", "json")

_TOL_DEFAULTS = {"rtol": None, "atol": None, "match": 1e-5, "omega": 1e-3}


# ---------------------------------------------------------------------------
# Configuration loading


def _schema() -> dict:
    res = importlib.resources.files("morseflow").joinpath("config_schema.json")
    return json.loads(res.read_text())


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {e}")
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "(top level)"
        raise ConfigError(f"config invalid at {where}: {e.message}")
    return raw


def build_system(cfg: dict) -> ReferenceSystem:
    spec = cfg["system"]
    if isinstance(spec, str):
        if spec == "f3d":
            _, flow = build_f3d()
            eq = axis_equilibria()
            crit = tuple((tuple(p), k) for p, k in zip(eq, (1, 0, 3, 2)))
            return ReferenceSystem(name="f3d", flow=flow, critical=crit)
        return _BUILTIN_FACTORIES[spec]()
    n = int(spec["dimension"])
    fld = list(spec["field"])
    if len(fld) != n:
        raise ConfigError(f"system.field has {len(fld)} components for "
                          f"dimension {n}")
    mode = spec.get("mode", "ambient")
    level = spec.get("level")
    if mode == "surface" and level is None:
        raise ConfigError("system.mode 'surface' needs a level expression")
    if mode == "ambient" and level is not None:
        raise ConfigError("system.level is only meaningful with mode "
                          "'surface'")
    try:
        flow = FlowSystem(n, fld, level=level)
    except Exception as e:
        raise ConfigError(f"cannot build system: {e}")
    return ReferenceSystem(name="custom", flow=flow)


def _tolerances(cfg: dict) -> dict:
    tol = dict(_TOL_DEFAULTS)
    tol.update(cfg.get("tolerances", {}))
    return tol


# ---------------------------------------------------------------------------
# Run context and artifact helpers


@dataclass
class RunContext:
    cfg: dict
    ref: ReferenceSystem
    out: Path
    formats: tuple
    rng: np.random.Generator
    tol: dict
    verbose: bool = False
    artifacts: list = field(default_factory=list)

    @property
    def sys(self):
        return self.ref.flow

    def say(self, msg: str) -> None:
        if self.verbose:
            print(msg, file=_sys.stderr)

    def _record(self, path: Path) -> None:
        self.artifacts.append(path)
        self.say(f"wrote {path}")

    def emit_csv(self, name, header, rows) -> None:
        if "csv" in self.formats:
            path = self.out / name
            reports.write_csv(path, header, rows)
            self._record(path)

    def emit_json(self, name, document) -> None:
        if "json" in self.formats:
            path = self.out / name
            reports.write_json(path, document)
            self._record(path)

    def emit_mesh(self, name, vertices, faces) -> None:
        if "mesh" in self.formats:
            path = self.out / name
            reports.write_mesh(path, vertices, faces)
            self._record(path)

    def emit_svg(self, name, renderer) -> None:
        if "svg" in self.formats:
            path = self.out / name
            renderer(path)
            self._record(path)


def _critical_section(cfg: dict) -> dict:
    return cfg["analysis"].get("critical", {})


def _classified(ctx: RunContext, section: dict) -> list:
    """Locate and classify the rest points of the configured system."""
    box = section.get("box")
    if box is None:
        box = _DEFAULT_BOX.get(ctx.ref.name)
    if box is None:
        raise ConfigError("custom systems need analysis.critical.box")
    if len(box) != ctx.sys.dimension:
        raise ConfigError(f"critical box has {len(box)} coordinate ranges "
                          f"for dimension {ctx.sys.dimension}")
    resolution = section.get("resolution",
                             _DEFAULT_RESOLUTION.get(ctx.ref.name, 6))
    pts = find_critical_points(ctx.sys, [tuple(b) for b in box],
                               resolution=resolution)
    if len(pts) == 0:
        raise ComputeError("no rest points found in the search box")
    return [classify(ctx.sys, p) for p in pts]


def _point_in_config(ctx: RunContext, point) -> np.ndarray:
    p = np.asarray(point, float)
    if p.shape != (ctx.sys.dimension,):
        raise ConfigError(f"point {point} does not match system dimension "
                          f"{ctx.sys.dimension}")
    return p


# ---------------------------------------------------------------------------
# analyze


def _cp_rows(cps):
    rows = []
    for i, (cp, lam) in enumerate(cps):
        row = [i] + list(cp.point) + [cp.index, lam, cp.gap]
        for ev in cp.eigenvalues:
            row.extend([ev.real, ev.imag])
        rows.append(row)
    return rows


def _foliate_block(ctx: RunContext, section: dict):
    charts = ctx.ref.charts
    if not charts:
        raise ComputeError("the configured system has no foliation charts")
    keys = sorted(charts.keys())
    if "point" in section:
        p = _point_in_config(ctx, section["point"])
        keys = [min(keys, key=lambda k: float(np.linalg.norm(np.array(k) - p)))]
    elif "charts" in section:
        sel = section["charts"]
        bad = [i for i in sel if i >= len(keys)]
        if bad:
            raise ComputeError(f"chart index {bad[0]} out of range "
                               f"(system has {len(keys)} charts)")
        keys = [keys[i] for i in sel]
    n_samples = section.get("samples", 40)
    t = 0.25
    rows = []
    worst_rho, worst_pi = 0.0, 0.0
    for ci, key in enumerate(keys):
        ch = charts[key]
        center = np.asarray(key, float)
        kept = 0
        tries = 0
        while kept < n_samples and tries < 50 * n_samples:
            tries += 1
            u = ctx.rng.normal(size=center.size)
            p = center + (0.05 + 0.25 * ctx.rng.random()) * u / np.linalg.norm(u)
            if ctx.sys.level is not None:
                p = refine_to_level(ctx.sys, p)
            if not ch.in_domain(p):
                continue
            q = flow_map(ctx.sys, p, t)
            if not ch.in_domain(q):
                continue
            rho_p = float(ch.rho(p))
            rho_res = abs(float(ch.rho(q)) - math.exp(-t) * rho_p)
            pi_res = float(np.linalg.norm(np.asarray(ch.pi_u(q), float)
                                          - flow_map(ctx.sys, np.asarray(ch.pi_u(p), float), t)))
            rows.append([ci, *p, rho_p, rho_res, pi_res])
            worst_rho = max(worst_rho, rho_res)
            worst_pi = max(worst_pi, pi_res)
            kept += 1
        if kept < n_samples:
            raise ComputeError(f"could not draw {n_samples} chart-domain "
                               f"samples around {key}")
    header = (["chart"] + [f"x{i + 1}" for i in range(ctx.sys.dimension)]
              + ["rho", "rho_equivariance", "pi_equivariance"])
    summary = {
        "charts": [{"index": i, "rest_point": list(k),
                    "provenance": charts[k].provenance,
                    "leaf_dim": charts[k].leaf_dim}
                   for i, k in enumerate(keys)],
        "flow_time": t,
        "samples_per_chart": n_samples,
        "max_rho_equivariance": worst_rho,
        "max_pi_equivariance": worst_pi,
    }
    return header, rows, summary


def refine_to_level(sys, p, iters: int = 20):
    """Project a point onto {level = 0} by Newton steps along the gradient."""
    x = np.asarray(p, float).copy()
    for _ in range(iters):
        g = sys._level_fn(x)
        if abs(g) < 1e-14:
            return x
        grad = sys._level_grad_fn(x)[0]
        x = x - g * grad / float(grad @ grad)
    return x


def cmd_analyze(ctx: RunContext, section: dict) -> dict:
    cps = _classified(ctx, section)
    pairs = [(cp, adapted_norm(cp).lam) for cp in cps]
    n_ev = len(cps[0].eigenvalues)
    header = (["id"] + [f"x{i + 1}" for i in range(ctx.sys.dimension)]
              + ["index", "lam", "gap"]
              + [c for i in range(n_ev) for c in (f"ev{i + 1}_re", f"ev{i + 1}_im")])
    ctx.emit_csv("critical.csv", header, _cp_rows(pairs))

    graph = connection_graph(ctx.sys, cps, match_tol=ctx.tol["match"])
    edge_rows = [[i, j, graph.edges[(i, j)], cps[i].index, cps[j].index]
                 for (i, j) in sorted(graph.edges)]
    ctx.emit_csv("connections.csv",
                 ["source", "target", "orbits", "source_index", "target_index"],
                 edge_rows)

    doc = {
        "system": ctx.ref.name,
        "dimension": ctx.sys.dimension,
        "critical_points": [
            {"id": i, "point": list(cp.point), "index": cp.index,
             "lam": lam, "gap": cp.gap,
             "eigenvalues": [[ev.real, ev.imag] for ev in cp.eigenvalues]}
            for i, (cp, lam) in enumerate(pairs)
        ],
        "connections": {
            "edges": [{"source": i, "target": j, "orbits": graph.edges[(i, j)]}
                      for (i, j) in sorted(graph.edges)],
            "visits": [{"source": i, "target": j, "orbits": graph.visits[(i, j)]}
                       for (i, j) in sorted(graph.visits)],
            "unresolved": len(graph.unresolved),
            "index_violations": [list(e) for e in sorted(graph.index_violations())],
        },
    }
    if "foliate" in ctx.cfg["analysis"]:
        fh, frows, fsummary = _foliate_block(ctx, ctx.cfg["analysis"]["foliate"])
        ctx.emit_csv("foliate.csv", fh, frows)
        doc["foliation"] = fsummary
    ctx.emit_json("analyze.json", doc)

    if ctx.sys.dimension == 2 and ctx.sys.level is None:
        box = section.get("box", _DEFAULT_BOX.get(ctx.ref.name))
        orbits = []
        for cp in cps:
            if cp.index == 0:
                continue
            for sgn in (1.0, -1.0):
                x0 = cp.point + sgn * 1e-3 * cp.unstable[:, 0]
                tr = integrate_trajectory(ctx.sys, x0, None, t_guard=40.0)
                orbits.append(tr.states)
        ctx.emit_svg("analyze.svg",
                     lambda path: figures.phase_portrait(
                         ctx.sys, box, path,
                         critical=[(cp.point, cp.index) for cp in cps],
                         orbits=orbits))
    print(f"{len(cps)} rest points, {len(graph.edges)} connection edges, "
          f"{len(graph.unresolved)} unresolved orbits")
    return {"critical_points": len(cps)}


# ---------------------------------------------------------------------------
# manifold


def cmd_manifold(ctx: RunContext, section: dict) -> dict:
    p0 = _point_in_config(ctx, section["point"])
    refined = refine_equilibrium(ctx.sys, p0)
    frame = AdaptedFrame.at(ctx.sys, refined)
    if frame.k == 0:
        raise ComputeError("the rest point is a sink; its unstable "
                           "manifold is the point itself")
    r = section.get("r", 0.5)
    m = section.get("grid", 65)
    sigma = unstable_manifold_local(ctx.sys, frame, r, m=m)

    k, d = frame.k, frame.d
    header = [f"u{i + 1}" for i in range(k)] + [f"w{i + 1}" for i in range(d - k)]
    ctx.emit_csv("sigma.csv", header, sigma.to_rows())

    log = sigma.log
    trace_rows = [[i + 1, c0, c1] for i, (c0, c1)
                  in enumerate(zip(log.c0_deltas, log.c1_deltas))]
    ctx.emit_csv("trace.csv", ["sweep", "c0_delta", "c1_delta"], trace_rows)

    fracs = (-0.5, -0.25, 0.0, 0.25, 0.5)
    tangent_rows = []
    for fr in fracs:
        xi = np.full(k, fr * sigma.radius)
        T = tangent_space_at(sigma, xi)
        row = list(xi)
        for col in range(T.basis.shape[1]):
            row.extend(T.basis[:, col])
        tangent_rows.append(row)
    theader = ([f"u{i + 1}" for i in range(k)]
               + [f"b{c + 1}_{r_ + 1}" for c in range(k) for r_ in range(d)])
    ctx.emit_csv("tangent.csv", theader, tangent_rows)

    doc = {
        "point": list(frame.cp.point),
        "index": frame.cp.index,
        "radius": sigma.radius,
        "grid": m,
        "sweeps": len(log.c0_deltas),
        "final_c0_delta": log.c0_deltas[-1] if log.c0_deltas else None,
        "final_c1_delta": log.c1_deltas[-1] if log.c1_deltas else None,
    }
    ctx.emit_json("manifold.json", doc)

    if k == 1 and d == 2:
        rows = np.asarray(sigma.to_rows(), float)
        ctx.emit_svg("manifold.svg",
                     lambda path: figures.curve_plot(
                         rows[:, 0], {"sigma": rows[:, 1]}, path,
                         xlabel="u", ylabel="sigma(u)"))
    print(f"graph over radius {sigma.radius} settled after "
          f"{len(log.c0_deltas)} sweeps")
    return {"sweeps": len(log.c0_deltas)}


# ---------------------------------------------------------------------------
# transversality


def cmd_transversality(ctx: RunContext, section: dict) -> dict:
    cps = _classified(ctx, _critical_section(ctx.cfg))
    n = section["samples"]
    seeds = ctx.cfg.get("seeds")
    if seeds:
        points = np.array([_point_in_config(ctx, s) for s in seeds])
    else:
        box = np.asarray(_critical_section(ctx.cfg).get(
            "box", _DEFAULT_BOX.get(ctx.ref.name)), float)
        if box is None:
            raise ConfigError("sampling needs seeds or a critical box")
        points = ctx.rng.uniform(box[:, 0], box[:, 1],
                                 size=(n, ctx.sys.dimension))
        if ctx.sys.level is not None:
            points = np.array([refine_to_level(ctx.sys, p) for p in points])
    res = transversality_scan(ctx.sys, cps, points,
                              match_tol=ctx.tol["match"])

    rows = [[i, *p, ai, aj, ang]
            for i, (p, ai, aj, ang) in enumerate(res.table)]
    header = (["id"] + [f"x{i + 1}" for i in range(ctx.sys.dimension)]
              + ["alpha", "omega", "angle_rad"])
    ctx.emit_csv("scan.csv", header, rows)
    doc = {
        "system": ctx.ref.name,
        "samples": int(len(points)),
        "resolved": len(res.table),
        "unresolved": len(res.unresolved),
        "min_angle": res.min_angle,
        "witness": None if res.witness is None else list(res.witness),
        "critical_points": [{"point": list(cp.point), "index": cp.index}
                            for cp in cps],
    }
    ctx.emit_json("transversality.json", doc)
    print(f"min transversality angle {res.min_angle:.6e} rad over "
          f"{len(res.table)} resolved orbits")
    return {"min_angle": res.min_angle}


# ---------------------------------------------------------------------------
# cellmap


def cmd_cellmap(ctx: RunContext, section: dict) -> dict:
    if not ctx.ref.charts:
        raise ComputeError("cell map sampling needs a system with "
                           "foliation charts (square4 or sphere_height)")
    target = _point_in_config(ctx, section["point"])
    asm = assembly_for(ctx.ref, target)
    evaluator = None
    if ctx.ref.exact is not None:
        def evaluator(t, p):
            return ctx.ref.exact(p, t)
    psi = build_psi(ctx.sys, asm.target, asm, evaluator=evaluator)
    radius = section.get("radius", 0.25)

    def g(a):
        return asm.target.point + radius * np.array([math.cos(a), math.sin(a)])

    cm = cell_map(psi, asm, g,
                  n_r=section.get("n_r", 9),
                  n_theta=section.get("n_theta", 720),
                  omega_tol=ctx.tol["omega"])

    dim = cm.center.size
    header = (["j", "m", "r", "theta"]
              + [f"x{i + 1}" for i in range(dim)] + ["regime"])
    rows = []
    for j in range(cm.n_r):
        for m_ in range(cm.n_theta):
            rows.append([j, m_, cm.radii[j], cm.angles[m_],
                         *cm.images[j, m_], int(cm.regimes[j, m_])])
    ctx.emit_csv("cellmap.csv", header, rows)

    vertices, faces = polar_mesh(cm)
    ctx.emit_mesh("cellmap.mesh", vertices, faces)

    report = continuity_report(cm)
    report.update({"system": ctx.ref.name, "k": cm.k,
                   "center": list(cm.center),
                   "n_r": cm.n_r, "n_theta": cm.n_theta,
                   "circle_radius": radius})
    ctx.emit_json("cellmap.json", report)

    if dim == 2:
        ctx.emit_svg("cellmap.svg",
                     lambda path: figures.cell_map_portrait(cm, path))
    print(f"cell map {cm.n_r}x{cm.n_theta}: boundary band max jump "
          f"{report['boundary_max_jump']:.6e}, "
          f"{report['n_failures']} failed samples")
    return {"n_failures": report["n_failures"]}


# ---------------------------------------------------------------------------
# counterexample


def cmd_counterexample(ctx: RunContext, section: dict) -> dict:
    spec = PerturbationSpec(k_max=section.get("K", 8),
                            epsilon=section.get("eps", 0.05),
                            delta=section.get("delta", 0.02))
    report = noncell_witness(spec)

    header = ["case", "k", "omega_x", "omega_y", "omega_z", "f_omega",
              "omega_err", "target_z", "alpha_target_z", "alpha_err"]
    rows = []
    for case, block in (("perturbed", report), ("control", report["control"])):
        for row in block["rows"]:
            rows.append([case, row["k"], *row["omega"], row["f_omega"],
                         row["omega_err"], row["target_z"],
                         row["alpha_target_z"], row["alpha_err"]])
    ctx.emit_csv("limits.csv", header, rows)
    ctx.emit_json("counterexample.json", report)
    ctx.emit_svg("counterexample.svg",
                 lambda path: figures.meridian_portrait(report, path))
    vals = ", ".join(f"{v:.6f}" for v in report["accumulation_values"])
    print(f"alternating={report['alternating']}, forward-limit values "
          f"accumulate at {{{vals}}}, gap {report['value_gap']:.6f}")
    return {"alternating": report["alternating"]}


# ---------------------------------------------------------------------------
# juxt


def cmd_juxt(ctx: RunContext, section: dict) -> dict:
    n = section.get("samples", 100)

    shift = LocalFlow(space="R", evaluator=lambda t, x: x + t)
    double = LocalFlow(space="R", evaluator=lambda t, x: x + 2.0 * t)
    half_line = SetPredicate.from_margin(lambda x: -x, name="(0,inf)")
    psi_line = juxtapose(shift, double, half_line)
    line_rows = []
    worst_line = 0.0
    for i in range(n):
        x = ctx.rng.uniform(-3.0, 3.0)
        s = ctx.rng.uniform(-4.0, 4.0)
        t = ctx.rng.uniform(-4.0, 4.0)
        res = group_law_residual(psi_line, x, s, t)
        worst_line = max(worst_line, res)
        line_rows.append([i, x, s, t, res])
    ctx.emit_csv("juxt_line.csv", ["id", "x", "s", "t", "residual"],
                 line_rows)

    ref = square4()
    asm = assembly_for(ref, [0.0, 0.0])
    psi_cell = build_psi(ref.flow, asm.target, asm,
                         evaluator=lambda t, p: ref.exact(p, t),
                         theta_h=0.02)
    n_cell = max(10, min(50, n // 4))
    cell_rows = []
    worst_cell = 0.0
    for i in range(n_cell):
        ang = ctx.rng.uniform(0.0, 2.0 * math.pi)
        rad = 0.75 * math.sqrt(ctx.rng.random())
        x = np.array([rad * math.cos(ang), rad * math.sin(ang)])
        s = ctx.rng.uniform(-2.0, 2.0)
        t = ctx.rng.uniform(-2.0, 2.0)
        res = group_law_residual(psi_cell, x, s, t)
        worst_cell = max(worst_cell, res)
        cell_rows.append([i, x[0], x[1], s, t, res])
    ctx.emit_csv("juxt_cell.csv", ["id", "x1", "x2", "s", "t", "residual"],
                 cell_rows)

    doc = {
        "line_pair": {"samples": n, "max_residual": worst_line},
        "square4": {"samples": n_cell, "max_residual": worst_cell},
    }
    ctx.emit_json("juxt.json", doc)
    print(f"group-law residuals: line pair {worst_line:.3e} "
          f"({n} triples), square4 cell {worst_cell:.3e} "
          f"({n_cell} triples)")
    return doc


# ---------------------------------------------------------------------------
# Entry point

_COMMANDS = {
    "analyze": ("critical", cmd_analyze),
    "manifold": ("manifold", cmd_manifold),
    "transversality": ("transversality", cmd_transversality),
    "cellmap": ("cellmap", cmd_cellmap),
    "counterexample": ("counterexample", cmd_counterexample),
    "juxt": ("juxt", cmd_juxt),
}


def _format_list(text: str):
    parts = tuple(p.strip() for p in text.split(",") if p.strip())
    bad = [p for p in parts if p not in ("csv", "json", "mesh", "svg")]
    if bad or not parts:
        raise argparse.ArgumentTypeError(
            f"formats must be a comma list from csv,json,mesh,svg; got {text!r}")
    return parts


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH",
                        help="JSON run configuration")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (overrides output.directory)")
    common.add_argument("--format", type=_format_list, metavar="LIST",
                        help="comma list from csv,json,mesh,svg "
                             "(overrides output.formats)")
    common.add_argument("--seed", type=int, default=0,
                        help="seed of the sampling generator (default 0)")
    common.add_argument("--verbose", action="store_true",
                        help="report every artifact on stderr")

    parser = argparse.ArgumentParser(
        prog="morseflow",
        description="Gradient-like flow analyses with file artifacts.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, blurb in (
            ("analyze", "rest points, indices, and the connection graph"),
            ("manifold", "local unstable-manifold graph"),
            ("transversality", "intersection-angle scan"),
            ("cellmap", "closed-ball characteristic map of a top cell"),
            ("counterexample", "alternating-limit witness report"),
            ("juxt", "juxtaposed-flow group-law residuals")):
        sub.add_parser(name, parents=[common], help=blurb)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    section_name, runner = _COMMANDS[args.command]
    try:
        cfg = load_config(args.config)
        ref = build_system(cfg)
        if section_name not in cfg["analysis"]:
            raise ConfigError(f"the {args.command} command needs an "
                              f"analysis.{section_name} section")
        out_cfg = cfg.get("output", {})
        out = Path(args.out or out_cfg.get("directory", "morseflow_out"))
        formats = tuple(args.format or out_cfg.get("formats",
                                                   _DEFAULT_FORMATS))
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"cannot create output directory: {e}")
    except ConfigError as e:
        print(f"error: {e}", file=_sys.stderr)
        return 2

    tol = _tolerances(cfg)
    if tol["rtol"] is not None:
        ref.flow.rtol = tol["rtol"]
    if tol["atol"] is not None:
        ref.flow.atol = tol["atol"]
    ctx = RunContext(cfg=cfg, ref=ref, out=out, formats=formats,
                     rng=np.random.default_rng(args.seed), tol=tol,
                     verbose=args.verbose)
    try:
        runner(ctx, cfg["analysis"][section_name])
    except ConfigError as e:
        print(f"error: {e}", file=_sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as e:
        diag = {"command": args.command, "error": type(e).__name__,
                "message": str(e)}
        reports.write_json(out / "diagnostics.json", diag)
        print(f"error: {args.command} failed "
              f"({type(e).__name__}: {e}); diagnostics written to "
              f"{out / 'diagnostics.json'}", file=_sys.stderr)
        return 3
    print(f"wrote {len(ctx.artifacts)} artifact(s) to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
