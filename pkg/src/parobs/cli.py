"""Command line runner: ``parobs run|report|validate|presets``.

Exit codes: 0 success, 1 a configured check failed, 2 invalid config,
3 solver failure, 4 missing files.  ``PAROBS_OUTPUT_ROOT`` overrides the
root that relative output directories are resolved against.
"""

import argparse
import bisect
import hashlib
import json
import os
import re
import sys
import time
from importlib import resources
from json.decoder import scanstring
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .blowup import blowup_densities, classify, make_sequence
from .errors import ConfigError, ParobsError, PolicyCycleError, SolverDivergedError
from .estimates import (EstimateReport, directional_monotonicity, gradient_dominance,
                        growth_and_nondegeneracy, harnack_ratios, log_envelope_fit,
                        regularity_norms)
from .expr import Expression, ExpressionError
from .freeboundary import (DEFAULT_KAPPA_C, DEFAULT_KAPPA_EPS, cone_test, density,
                           extract_contact_set, extract_free_boundary, space_graph, time_graph)
from .grid import Cylinder, Grid, GridFunction, _jsonable, save_grid_function
from .operators import (EllipticityBounds, bellman, linear, obstacle_transform, pucci_diagonal,
                        trace)
from .presets import (planted_field, random_positive_spec, stationary_1d_spec,
                      travelling_wave_spec)
from .solver import (PenaltySchedule, ProblemSpec, continuation_solve, solve_obstacle_direct)

OUTPUT_ROOT_ENV = "PAROBS_OUTPUT_ROOT"
EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_SOLVER, EXIT_MISSING = 0, 1, 2, 3, 4

PRESETS = {
    "stationary_1d": "heat operator, f = -1, exact steady solution u = x_+^2 / 2 (1D)",
    "travelling_wave": "heat operator, f = -1, exact solution w(x + c t), "
                       "w(s) = (e^{cs} - 1 - cs) / c^2 (1D)",
    "random_positive": "diagonal Pucci (lambda=1, Lambda=2), random smooth positive data (1D)",
    "singular_2d": "planted field u = x_1^2 / 2 in 2D, singular free boundary point at 0",
}

PRESET_PARAMS = {
    "stationary_1d": {"t_end", "extent"},
    "travelling_wave": {"c", "extent", "t_range"},
    "random_positive": {"t_end", "lambda", "Lambda", "n_modes", "floor"},
    "singular_2d": {"extent", "t_range"},
}


# -- config loading -----------------------------------------------------------

def _line_map(text):
    """Map JSON paths (tuples of keys / indices) to 1-based source lines."""
    starts = [0] + [m.end() for m in re.finditer("\n", text)]
    lines = {}
    pos = 0

    def line(i):
        return bisect.bisect_right(starts, i)

    def ws():
        nonlocal pos
        while pos < len(text) and text[pos] in " \t\r\n":
            pos += 1

    def value(path):
        nonlocal pos
        ws()
        lines.setdefault(path, line(pos))
        c = text[pos]
        if c == "{":
            pos += 1
            ws()
            if text[pos] == "}":
                pos += 1
                return
            while True:
                ws()
                key_line = line(pos)
                key, pos = scanstring(text, pos + 1)
                lines[path + (key,)] = key_line
                ws()
                pos += 1  # ':'
                value(path + (key,))
                ws()
                sep = text[pos]
                pos += 1
                if sep == "}":
                    return
        elif c == "[":
            pos += 1
            ws()
            if text[pos] == "]":
                pos += 1
                return
            i = 0
            while True:
                value(path + (i,))
                i += 1
                ws()
                sep = text[pos]
                pos += 1
                if sep == "]":
                    return
        elif c == '"':
            _, pos = scanstring(text, pos + 1)
        else:
            m = re.compile(r"[^,\]\}\s]+").match(text, pos)
            pos = m.end()

    value(())
    return lines


class Config:
    """Parsed configuration with source-line lookup for error messages."""

    def __init__(self, data, lines=None, path=None):
        self.data = data
        self.lines = lines or {}
        self.path = path

    def line(self, path):
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def error(self, path, message):
        return ConfigError(message, self.line(path))

    @property
    def hash(self):
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _schema():
    return json.loads(resources.files("parobs").joinpath("configs/schema.json").read_text())


def bundled_configs():
    root = resources.files("parobs").joinpath("configs")
    return sorted(p.name[:-5] for p in root.iterdir()
                  if p.name.endswith(".json") and p.name != "schema.json")


def resolve_config_path(name):
    path = Path(name)
    if path.exists():
        return path
    stem = name[:-5] if name.endswith(".json") else name
    if stem in bundled_configs():
        return Path(str(resources.files("parobs").joinpath(f"configs/{stem}.json")))
    raise FileNotFoundError(f"config {name!r} not found (bundled: {', '.join(bundled_configs())})")


def load_config(path):
    """Read, parse and schema-check a config file; raises :class:`ConfigError`."""
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    cfg = Config(data, _line_map(text), path)
    validate(cfg)
    return cfg


def validate(cfg):
    validator = jsonschema.Draft202012Validator(_schema())
    errors = list(validator.iter_errors(cfg.data))
    # an unknown key usually explains a missing required one (typos)
    unknown = [e for e in errors if e.validator == "additionalProperties"]
    err = jsonschema.exceptions.best_match(unknown or errors)
    if err is not None:
        path = list(err.absolute_path)
        m = re.search(r"'([^']+)' was unexpected", err.message)
        if m:
            path.append(m.group(1))
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise cfg.error(path, f"{where}: {err.message}")
    # semantic checks that the schema cannot express
    prob = cfg.data["problem"]
    if prob["kind"] == "preset":
        allowed = PRESET_PARAMS[prob["preset"]]
        for key in prob.get("params", {}):
            if key not in allowed:
                raise cfg.error(["problem", "params", key],
                                f"unknown parameter {key!r} for preset {prob['preset']!r}")
    else:
        n = prob["dimension"]
        if len(prob["extent"]) != n:
            raise cfg.error(["problem", "extent"], f"extent needs {n} intervals")
        for key in ("source", "obstacle", "boundary", "initial", "field"):
            if isinstance(prob.get(key), str):
                try:
                    Expression(prob[key])
                except ExpressionError as exc:
                    raise cfg.error(["problem", key], str(exc)) from None
        if prob["kind"] == "custom":
            op = prob["operator"]
            if op["kind"] == "linear" and "A" not in op:
                raise cfg.error(["problem", "operator"], "linear operator needs a matrix A")
            if op["kind"] in ("pucci_diagonal", "bellman") and ("lambda" not in op
                                                                 or "Lambda" not in op):
                raise cfg.error(["problem", "operator"], "operator needs lambda and Lambda")
            if op["kind"] == "bellman" and "controls" not in op:
                raise cfg.error(["problem", "operator"], "bellman operator needs controls")
            if "obstacle" in prob and "source" in prob:
                raise cfg.error(["problem", "source"],
                                "give either a source or an obstacle, not both")
            if "obstacle" not in prob and "source" not in prob:
                raise cfg.error(["problem"], "custom problems need a source or an obstacle")
    pen = cfg.data.get("penalty", {})
    eps = pen.get("epsilons", [])
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise cfg.error(["penalty", "epsilons"], "epsilons must be strictly decreasing")
    return cfg


# -- problem construction ---------------------------------------------------

def _grid_dt(cfg):
    d = cfg.data["discretization"]
    return d["h"], d.get("dt"), d.get("dt_factor", 1.0)


def build_problem(cfg):
    """Return ``("solve", ProblemSpec)`` or ``("planted", GridFunction)``."""
    prob = cfg.data["problem"]
    h, dt, dt_factor = _grid_dt(cfg)
    params = prob.get("params", {})
    try:
        if prob["kind"] == "preset":
            name = prob["preset"]
            if name == "stationary_1d":
                return "solve", stationary_1d_spec(h=h, t_end=params.get("t_end", 1.0 / 16),
                                                   extent=tuple(params.get("extent", (-1, 1))))
            if name == "travelling_wave":
                return "solve", travelling_wave_spec(
                    h=h, c=params.get("c", 1.0), extent=tuple(params.get("extent", (-2, 2))),
                    t_range=tuple(params.get("t_range", (0, 1))), dt_factor=dt_factor)
            if name == "random_positive":
                bounds = EllipticityBounds(params.get("lambda", 1.0), params.get("Lambda", 2.0))
                return "solve", random_positive_spec(
                    cfg.data.get("seed", 0), h=h, bounds=bounds, t_end=params.get("t_end", 2.0),
                    n_modes=params.get("n_modes", 3), floor=params.get("floor", 3.0))
            extent = tuple(params.get("extent", (-1, 1)))
            grid = Grid(extent=(extent, extent), h=h, dt=dt or 1.0 / 16,
                        t_range=tuple(params.get("t_range", (-1, 1))))
            return "planted", planted_field(grid, lambda x1, x2: 0.5 * x1**2,
                                            {"problem": "singular_2d"})
        n = prob["dimension"]
        grid = Grid(extent=[tuple(e) for e in prob["extent"]], h=h,
                    dt=dt if dt is not None else dt_factor * h**2,
                    t_range=tuple(prob["t_range"]))
        if prob["kind"] == "planted":
            expr = Expression(prob["field"])
            coords = [c[None] for c in grid.mesh()]
            t = grid.times.reshape((-1,) + (1,) * n)
            env = {f"x{i + 1}": c for i, c in enumerate(coords)}
            if n == 1:
                env["x"] = coords[0]
            values = np.broadcast_to(expr(**env, t=t), (grid.nt,) + grid.shape).copy()
            return "planted", GridFunction(grid, values, meta=dict(prob.get("meta", {}),
                                                                     planted=True))
        return "solve", _custom_spec(cfg, grid, n)
    except ConfigError:
        raise
    except (ValueError, ExpressionError) as exc:
        raise cfg.error(["problem"], f"cannot build problem: {exc}") from None


def _custom_spec(cfg, grid, n):
    prob = cfg.data["problem"]
    op = prob["operator"]
    if op["kind"] == "trace":
        F = trace(n)
    elif op["kind"] == "linear":
        bounds = EllipticityBounds(op["lambda"], op["Lambda"]) if "lambda" in op else None
        F = linear(np.asarray(op["A"], dtype=float), bounds)
    else:
        bounds = EllipticityBounds(op["lambda"], op["Lambda"])
        F = pucci_diagonal(bounds, n) if op["kind"] == "pucci_diagonal" \
            else bellman(bounds, op["controls"])
    g_v = Expression(prob["boundary"]).space_time(n)
    init_v = Expression(prob["initial"]).spatial(n) if "initial" in prob else None
    if "obstacle" in prob:
        phi_fn = Expression(prob["obstacle"]).spatial(n)
        tr = obstacle_transform(F, grid, phi_fn)
        phi = tr.obstacle

        def g(*args):
            return g_v(*args) - phi

        init = None if init_v is None else init_v(*grid.mesh()) - phi
        return ProblemSpec(tr.operator, grid, tr.source, g, init, phi, name=cfg.data["name"])
    src = prob["source"]
    source = Expression(src).spatial(n) if isinstance(src, str) else float(src)
    return ProblemSpec(F, grid, source, g_v, init_v, name=cfg.data["name"])


# -- analyses -----------------------------------------------------------------

def _point(p):
    return (tuple(p[0]), float(p[1]))


def _region(d):
    return Cylinder(tuple(d["x0"]), d["t0"], d["r"], d.get("variant", "Q"))


def _in_range(value, rng):
    return value is not None and rng[0] <= value <= rng[1]


class _Context:
    def __init__(self, u, cfg):
        self.u = u
        self.cfg = cfg
        self._contact = None
        self._cloud = None
        self.kappa_c = DEFAULT_KAPPA_C
        self.kappa_eps = DEFAULT_KAPPA_EPS
        for a in cfg.data.get("analyses", []):
            if a["kind"] == "free_boundary":
                self.kappa_c = a.get("kappa_c", self.kappa_c)
                self.kappa_eps = a.get("kappa_eps", self.kappa_eps)

    @property
    def contact(self):
        if self._contact is None:
            self._contact = extract_contact_set(self.u, self.kappa_c, self.kappa_eps)
        return self._contact

    @property
    def cloud(self):
        if self._cloud is None:
            self._cloud = extract_free_boundary(self.u, self.contact)
        return self._cloud


def _analysis(ctx, a, out, stem):
    """Run one configured analysis; returns ``(EstimateReport, extra files)``."""
    u, kind = ctx.u, a["kind"]
    files = []
    if kind == "free_boundary":
        cloud = ctx.cloud
        files.append(cloud.to_csv(out / f"{stem}_cloud.csv"))
        constants = {"points": len(cloud), "tol": cloud.tol}
        params = {"kappa_c": ctx.kappa_c, "kappa_eps": ctx.kappa_eps}
        passed = True
        rows = []
        if a.get("time_graph", False):
            tg = time_graph(cloud)
            files.append(tg.to_csv(out / f"{stem}_tau.csv"))
            ok = ~tg.flagged
            slope = float(np.polyfit(tg.table[ok, 0], tg.table[ok, -1], 1)[0]) \
                if u.grid.n == 1 and ok.sum() >= 2 else None
            constants.update(lipschitz=tg.lipschitz_estimate, tau_slope=slope,
                             flagged_columns=int(np.count_nonzero(tg.flagged)))
            if "expect_lipschitz" in a:
                passed &= _in_range(tg.lipschitz_estimate, a["expect_lipschitz"])
            if "expect_tau_slope" in a:
                passed &= _in_range(slope, a["expect_tau_slope"])
            rows.append([0.0, tg.lipschitz_estimate if tg.lipschitz_estimate is not None
                         else float("nan")])
        if "space_graph" in a:
            sg_cfg = a["space_graph"]
            x0, rho = sg_cfg["window"]
            sg = space_graph(cloud, sg_cfg["e"], (x0, rho), times=sg_cfg.get("times"))
            files.append(sg.to_csv(out / f"{stem}_graph.csv"))
            constants.update(space_graph=sg.to_dict())
            rows.append([1.0, sg.lipschitz_estimate if sg.lipschitz_estimate is not None
                         else float("nan")])
        # graph column: 0 = time graph t = tau(x), 1 = space graph
        return EstimateReport("free_boundary", ["graph", "lipschitz"], rows, constants,
                              bool(passed), params), files
    if kind == "density":
        rows = [[r, density(u, ctx.contact, _point(a["point"]), r)] for r in a["radii"]]
        passed = all(_in_range(d, a["expect"]) for _, d in rows) if "expect" in a else True
        return EstimateReport("density", ["r", "density"], rows,
                              {"last": rows[-1][1]}, passed,
                              {"point": a["point"], "tol": ctx.contact.tol}), files
    if kind == "growth":
        return growth_and_nondegeneracy(u, _point(a["point"]), a["radii"],
                                        tuple(a.get("slope_window", (1.9, 2.1))),
                                        a.get("c_min")), files
    if kind == "regularity":
        return regularity_norms(u, _region(a["region"]), a.get("exclude_cells", 1),
                                ctx.contact.tol), files
    if kind == "envelope":
        return log_envelope_fit(u, _point(a["point"]), a["quantity"], a["radii"],
                                a.get("norm_bound")), files
    if kind == "monotonicity":
        rep = directional_monotonicity(u, _point(a["sigma"]), _region(a["region"]))
        if "expect_min" in a:
            rep.passed = rep.constants["min"] >= a["expect_min"]
        else:
            rep.passed = True     # reported raw
        return rep, files
    if kind == "gradient_dominance":
        rep = gradient_dominance(u, _region(a["region"]), a.get("mode", "time_over_gradient"),
                                 a.get("e"), a.get("tol", 0.0), contact_tol=ctx.contact.tol)
        if "expect" in a:
            rep.passed = rep.passed and _in_range(rep.constants["c"], a["expect"])
        return rep, files
    if kind == "harnack":
        return harnack_ratios(u, _point(a["center"]), a["r"], a.get("C0", 0.0), a.get("p", 0.5),
                              tuple(a.get("deltas", (0.2, 0.1, 0.05)))), files
    if kind == "blowup":
        try:
            cloud = ctx.cloud
        except ParobsError:
            cloud = None
        seq = make_sequence(u, _point(a["point"]), a.get("r0", 0.5), a.get("rho", 0.5),
                            a.get("K", 3), contact=ctx.contact, cloud=cloud)
        dens = blowup_densities(u, seq, ctx.contact)
        c = classify(seq, dens, a.get("class_tol", 0.05))
        info = c.to_dict()
        passed = c.verdict == a["expect"] if "expect" in a else True
        rows = [[r, hp, q, d] for r, hp, q, d in zip(
            seq.radii, c.evidence["half_parabola_residuals"], c.evidence["quadratic_residuals"],
            dens)]
        return EstimateReport("blowup", ["r", "half_parabola_residual", "quadratic_residual",
                                         "density"], rows,
                              {"verdict": c.verdict, "fit": info["fit"],
                               "summary": _verdict_text(c)}, passed,
                              {"point": a["point"], "r0": a.get("r0", 0.5),
                               "rho": a.get("rho", 0.5), "K": a.get("K", 3),
                               "class_tol": a.get("class_tol", 0.05)}), files
    if kind == "cone":
        x0 = np.asarray(a["x0"], dtype=float)
        pts = ctx.cloud.spatial(a["t"])[:, :-1]
        d = np.linalg.norm(pts - x0, axis=1)
        pts = pts[(d > 4 * u.grid.h) & (d <= a["radius"])]
        ok = cone_test(pts, x0, a["e0"], np.deg2rad(a["theta_deg"]))
        passed = ok == a["expect"] if "expect" in a else True
        return EstimateReport("cone", ["points", "outside_cone"], [[len(pts), float(ok)]],
                              {"outside_cone": ok}, passed,
                              {"x0": a["x0"], "e0": a["e0"], "theta_deg": a["theta_deg"],
                               "t": a["t"], "radius": a["radius"],
                               "exclude_radius": 4 * u.grid.h}), files
    raise ConfigError(f"unknown analysis kind {kind!r}")


def _fmt(v):
    r = round(float(v), 2)
    return f"{r:g}" if r != 0 else "0"


def _verdict_text(c):
    if c.verdict == "Singular":
        A = np.asarray(c.fit.A)
        off = A - np.diag(np.diag(A))
        if np.all(np.abs(off) < 0.005):
            return f"Singular, A≈diag({','.join(_fmt(v) for v in np.diag(A))})"
        return f"Singular, A≈{[[_fmt(v) for v in row] for row in A]}"
    if c.verdict == "Regular":
        e = ",".join(_fmt(v) for v in c.fit.e)
        return f"Regular, a≈{_fmt(c.fit.a)}, e≈({e})"
    return "Undetermined"


# -- run ------------------------------------------------------------------------

def _output_dir(cfg):
    directory = Path(cfg.data["output"]["directory"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) / directory if root else directory


def _write_json(path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _solve(cfg, spec):
    pen = cfg.data.get("penalty", {})
    sched = PenaltySchedule(tuple(pen.get("epsilons", (1e-2, 1e-3, 1e-4))),
                            pen.get("newton_tol", 1e-8), pen.get("max_newton", 50),
                            pen.get("max_policy", 50))
    stride = cfg.data["output"].get("save_stride", 1)
    if pen.get("method", "penalized") == "direct":
        u, rep = solve_obstacle_direct(spec, sched, save_stride=stride)
        return u, [rep]
    try:
        sched.check_floor(spec.grid.h, pen.get("kappa_eps", 1.0))
    except ValueError as exc:
        raise cfg.error(["penalty", "epsilons"], str(exc)) from None
    return continuation_solve(spec, sched, oracle=True if pen.get("oracle") else None,
                              save_stride=stride, kappa_eps=pen.get("kappa_eps", 1.0))


def run(config, stream=None, err=None):
    """Execute a config end to end; returns the exit code."""
    stream, err = stream or sys.stdout, err or sys.stderr
    try:
        path = resolve_config_path(str(config))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_MISSING
    try:
        cfg = load_config(path)
        mode, obj = build_problem(cfg)
    except ConfigError as exc:
        print(f"{path}: {exc}", file=err)
        return EXIT_CONFIG
    out = _output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    name = cfg.data["name"]
    timings, files, checks = {}, [], {}
    t0 = time.perf_counter()
    if mode == "solve":
        try:
            u, reports = _solve(cfg, obj)
        except ConfigError as exc:
            print(f"{path}: {exc}", file=err)
            return EXIT_CONFIG
        except (SolverDivergedError, PolicyCycleError) as exc:
            dump = {"error": f"{type(exc).__name__}: {exc}", "step": getattr(exc, "step", None),
                    "report": exc.report.to_dict() if hasattr(exc, "report") else None}
            _write_json(out / f"{name}_solve_failure.json", dump)
            print(json.dumps(_jsonable(dump), indent=2, sort_keys=True), file=err)
            return EXIT_SOLVER
        solve_info = []
        for rep in reports:
            d = rep.to_dict()
            d.pop("wall_time", None)      # timings live in the manifest only
            solve_info.append(d)
        max_h = max(r.max_h_eps or 0.0 for r in reports)
        files.append(_write_json(out / f"{name}_solve.json",
                                 {"reports": solve_info, "problem": obj.name,
                                  "c0": obj.c0, "K": obj.K()}))
        checks["penalty_bound"] = bool(max_h <= max(1.0, float(np.abs(obj.source).max())) + 1e-8)
    else:
        u = obj
    timings["solve"] = time.perf_counter() - t0

    snap_times = cfg.data["output"].get("snapshot_times", [float(u.times[-1])])
    levels = sorted({u.level_index(t) for t in snap_times})
    snap = GridFunction(u.grid, u.values[levels], u.times[levels], meta=u.meta)
    files.extend(save_grid_function(snap, out / f"{name}_u"))

    ctx = _Context(u, cfg)
    counts = {}
    for i, a in enumerate(cfg.data.get("analyses", [])):
        t1 = time.perf_counter()
        kind = a["kind"]
        counts[kind] = counts.get(kind, 0) + 1
        stem = f"{name}_{kind}" + (f"_{counts[kind]}" if counts[kind] > 1 else "")
        try:
            rep, extra = _analysis(ctx, a, out, stem)
        except ConfigError as exc:
            print(f"{path}: {cfg.error(['analyses', i], str(exc))}", file=err)
            return EXIT_CONFIG
        except (ParobsError, ValueError) as exc:
            rep = EstimateReport(kind, [], [], {"error": f"{type(exc).__name__}: {exc}"}, False,
                                 dict(a))
            extra = []
        rep.params = dict(rep.params, config=a)
        files.append(_write_json(out / f"{stem}.json", rep.to_dict()))
        if rep.table:
            from .freeboundary import _write_csv
            _write_csv(out / f"{stem}.csv", rep.columns, rep.table)
            files.append(out / f"{stem}.csv")
        files.extend(extra)
        checks[stem] = bool(rep.passed)
        timings[stem] = time.perf_counter() - t1

    passed = all(checks.values())
    manifest = {
        "name": name,
        "config": str(path),
        "config_hash": cfg.hash,
        "version": __version__,
        "timings": timings,
        "checks": checks,
        "passed": passed,
        "files": [{"path": str(Path(f).relative_to(out)), "sha256": _sha256(f)} for f in files],
    }
    _write_json(out / "manifest.json", manifest)
    for stem, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {stem}", file=stream)
    print(f"outputs in {out}", file=stream)
    return EXIT_OK if passed else EXIT_CHECK_FAILED


# -- report -------------------------------------------------------------------

PREDICTED = {
    "growth": [("slope", "2 (sup_Q u <= C r^2 and sup_Q- u >= c r^2)"),
               ("C", "finite upper growth constant"),
               ("c", ">= c0/(2 Lambda n + 1) (non-degeneracy)")],
    "density": [("last", "1/2 at regular points, 0 at singular points")],
    "regularity": [("sup_dt", "bounded d_t u"), ("sup_hessian", "bounded D^2 u")],
    "envelope_min_second_derivative": [("C_env", "d_ee u >= -C abs(log r)^(-eps)"),
                                       ("eps_env", "eps > 0")],
    "envelope_max_time_derivative": [("C_env", "d_t u <= C abs(log r)^(-eps)"),
                                     ("eps_env", "eps > 0")],
    "directional_monotonicity": [("min", ">= 0 near regular points (rescaled)")],
    "gradient_dominance": [("c", "c > 0 with q >= c norm(grad u) near regular points")],
    "harnack": [("ratio1", "finite Harnack constant"), ("ratio2", "finite weak Harnack constant"),
                ("m", "finite exponent in C / delta^m")],
    "blowup": [("summary", "Regular: a (e.x)_+^2; Singular: x^T A x with A >= 0")],
    "free_boundary": [("lipschitz", "Lipschitz graph t = tau(x)"),
                      ("tau_slope", "exact boundary slope when known")],
    "cone": [("outside_cone", "no singular points inside the cone")],
}


def _cell(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def report(run_dir, stream=None, err=None):
    """Write ``summary.md`` for a finished run; returns the exit code."""
    stream, err = stream or sys.stdout, err or sys.stderr
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        print(f"missing: {manifest_path}", file=err)
        return EXIT_MISSING
    manifest = json.loads(manifest_path.read_text())
    gaps = [f["path"] for f in manifest.get("files", []) if not (run_dir / f["path"]).exists()]
    if gaps:
        print("missing files:\n" + "\n".join(f"  {g}" for g in gaps), file=err)
        return EXIT_MISSING
    lines = [f"# Run summary: {manifest['name']}", "",
             f"- config: `{manifest['config']}` (sha256 {manifest['config_hash'][:12]})",
             f"- parobs version: {manifest['version']}",
             f"- overall: {'PASS' if manifest['passed'] else 'FAIL'}", "",
             "| analysis | quantity | value | predicted form | pass | provenance |",
             "|---|---|---|---|---|---|"]
    for stem, ok in manifest["checks"].items():
        path = run_dir / f"{stem}.json"
        if stem == "penalty_bound":
            solve_name = f"{manifest['name']}_solve.json"
            reps = json.loads((run_dir / solve_name).read_text())["reports"]
            max_h = max(r.get("max_h_eps") or 0.0 for r in reps)
            lines.append(f"| penalty | max beta_eps | {_cell(float(max_h))} | "
                         f"0 <= h_eps <= max(1, ‖f‖∞) | {'yes' if ok else 'no'} | {solve_name} |")
            continue
        rep = json.loads(path.read_text())
        consts = rep["constants"]
        for key, form in PREDICTED.get(rep["name"], []):
            if key in consts:
                lines.append(f"| {rep['name']} | {key} | {_cell(consts[key])} | {form} | "
                             f"{'yes' if ok else 'no'} | {path.name} |")
        if "error" in consts:
            lines.append(f"| {rep['name']} | error | {consts['error']} | | no | {path.name} |")
    lines.append("")
    text = "\n".join(lines)
    (run_dir / "summary.md").write_text(text)
    print(text, file=stream)
    return EXIT_OK


# -- entry point ------------------------------------------------------------------

def _cmd_validate(args):
    try:
        path = resolve_config_path(args.config)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    try:
        cfg = load_config(path)
        build_problem(cfg)
    except ConfigError as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{path}: ok")
    return EXIT_OK


def _cmd_presets(args):
    for name, desc in PRESETS.items():
        print(f"{name:18s} {desc}")
    print("\nbundled configs: " + ", ".join(bundled_configs()))
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="parobs",
                                     description="Parabolic obstacle problem experiments")
    parser.add_argument("--version", action="version", version=f"parobs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="solve and analyse a config (path or bundled name)")
    p.add_argument("config")
    p = sub.add_parser("report", help="summarise a run directory")
    p.add_argument("run_dir")
    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")
    sub.add_parser("presets", help="list bundled problems and configs")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config)
    if args.command == "report":
        return report(args.run_dir)
    if args.command == "validate":
        return _cmd_validate(args)
    return _cmd_presets(args)


if __name__ == "__main__":
    sys.exit(main())
