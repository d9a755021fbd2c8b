"""Command-line front end: problem files in, JSON reports and CSV tables out.

Exit codes: 0 ok, 2 invalid input, 3 certification failure, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .epsnum import EpsLadder, EpsScalarFamily, estimate_order, make_ladder
from .errors import CertificationError, NumericalError, ValidationError
from .expr import compile_expr, matrix_rule
from .forms import (CORPUS_NAMES, BoxDomain, GenTwoForm, MetricFamily, MollifierSpec, RawRule,
                    TwoFormField, corpus, mollify)
from .gridio import read_grid_csv, write_grid_csv, write_table_csv
from .moser import (DarbouxConfig, check_star, darboux_pipeline, derive_starstar, jump_fixture)
from .poisson import (GeodesicProblem, ScalarField, geodesic_flow_compare, jacobi_residual,
                      poisson_bracket)
from .symplin import dx_dxi, j_can

log = logging.getLogger("gensympl")

SUPPORTED_VERSIONS = (1,)
EXIT_OK, EXIT_VALIDATION, EXIT_CERT, EXIT_NUMERICAL = 0, 2, 3, 4
_PIPELINE_KEYS = {f.name for f in dataclasses.fields(DarbouxConfig)}
_POSITIVE = ("step", "flow_tol", "quad_tol", "interp_tol", "fd_rel", "conservation_dt")


# ------------------------------------------------------------- problem files

@dataclasses.dataclass
class Problem:
    raw: dict
    base_dir: Path
    ladder: EpsLadder
    domain: BoxDomain
    mollifier: MollifierSpec
    pipeline: dict
    center: np.ndarray
    seed: int

    def section(self, name):
        return self.raw.get(name, {})


def _pair_key(key, d, problems, where, allow_diag=False):
    try:
        i, j = (int(s) - 1 for s in str(key).split(","))
    except ValueError:
        problems.append(f"{where}: entry key {key!r} must look like 'i,j'")
        return None
    if not (0 <= i < d and 0 <= j < d) or (j < i) or (i == j and not allow_diag):
        problems.append(f"{where}: entry {key!r} must satisfy 1 <= i {'<=' if allow_diag else '<'} j <= {d}")
        return None
    return i, j


def _number(sec, key, default, problems, where, positive=False, integer=False):
    v = sec.get(key, default)
    if integer:
        ok = isinstance(v, int) and not isinstance(v, bool)
    else:
        ok = isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
    if not ok:
        problems.append(f"{where}.{key}: expected a {'integer' if integer else 'number'}, got {v!r}")
        return default
    if positive and not v > 0:
        problems.append(f"{where}.{key}: must be > 0, got {v!r}")
    return v


def parse_problem(data, base_dir="."):
    """Validate a parsed problem document; raises ValidationError listing every issue."""
    problems = []
    base_dir = Path(base_dir)
    version = data.get("version")
    if version not in SUPPORTED_VERSIONS:
        problems.append(f"version: expected one of {SUPPORTED_VERSIONS}, got {version!r}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        problems.append(f"seed: expected an integer, got {seed!r}")
        seed = 0

    form = data.get("form", {})
    n = form.get("n", 1)
    if not isinstance(n, int) or n < 1:
        problems.append(f"form.n: expected a positive integer, got {n!r}")
        n = 1
    d = 2 * n
    if form.get("corpus") == "tm_metric":
        d = 2 * n

    dom = data.get("domain", {})
    lo = dom.get("lo", [-1.0] * d)
    hi = dom.get("hi", [1.0] * d)
    grid = dom.get("grid", [101 if d <= 2 else 21] * d)
    domain = None
    if not (len(lo) == len(hi) == len(grid) == d):
        problems.append(f"domain: lo, hi and grid need {d} entries each")
    else:
        try:
            domain = BoxDomain(tuple(lo), tuple(hi), tuple(grid))
        except (ValidationError, TypeError, ValueError) as exc:
            problems.append(f"domain: {exc}")

    lad = data.get("ladder", {})
    ladder = None
    try:
        if "values" in lad:
            ladder = EpsLadder(tuple(lad["values"]), "custom")
        else:
            ladder = make_ladder(lad.get("eps_max", 0.4), lad.get("eps_min", 0.05), lad.get("count", 4))
    except (ValidationError, TypeError) as exc:
        problems.append(f"ladder: {exc}")

    mol = data.get("mollifier", {})
    mollifier = None
    try:
        mollifier = MollifierSpec(mol.get("kernel", "bump"), mol.get("nodes", 64), mol.get("radius", 1.0))
    except (ValidationError, TypeError) as exc:
        problems.append(f"mollifier: {exc}")

    pipe = dict(data.get("pipeline", {}))
    center = np.asarray(pipe.pop("center", [0.0] * d), dtype=float)
    if center.shape != (d,):
        problems.append(f"pipeline.center: expected {d} coordinates")
        center = np.zeros(d)
    elif domain is not None and not np.all(domain.contains(center)):
        problems.append("pipeline.center: outside the domain")
    for k, v in pipe.items():
        if k not in _PIPELINE_KEYS or k == "eps_indices":
            problems.append(f"pipeline.{k}: unknown setting")
        elif k in _POSITIVE or k.endswith("_tol"):
            _number(pipe, k, 1.0, problems, "pipeline", positive=True)
    if pipe.get("mode", "auto") not in ("auto", "table", "direct"):
        problems.append(f"pipeline.mode: expected auto, table or direct, got {pipe.get('mode')!r}")

    _validate_form(form, d, base_dir, domain, problems)
    if "poisson" in data:
        _validate_poisson(data["poisson"], d, problems)
    if "geodesic" in data:
        _validate_geodesic(data["geodesic"], problems)
    for k, v in data.get("verify", {}).items():
        _number(data["verify"], k, 1.0, problems, "verify", positive=True)

    if problems:
        raise ValidationError(f"{len(problems)} problem(s) in problem file", problems)
    return Problem(data, base_dir, ladder, domain, mollifier, pipe, center, seed)


def _validate_form(form, d, base_dir, domain, problems):
    sources = [k for k in ("corpus", "entries", "grid") if k in form]
    if len(sources) != 1:
        problems.append("form: give exactly one of corpus, entries or grid")
        return
    if "corpus" in form:
        if form["corpus"] not in CORPUS_NAMES:
            problems.append(f"form.corpus: unknown name {form['corpus']!r}; choose from {CORPUS_NAMES}")
        if form["corpus"] == "tm_metric":
            m = form.get("metric", "flat")
            if m not in ("flat", "heaviside"):
                problems.append(f"form.metric: expected flat or heaviside, got {m!r}")
        _number(form, "scale", 1.0, problems, "form")
    elif "entries" in form:
        for key, text in form["entries"].items():
            _pair_key(key, d, problems, "form.entries")
            try:
                compile_expr(text, d)
            except ValidationError as exc:
                problems.extend(f"form.entries[{key}]: {p}" for p in exc.problems)
    else:
        for key, fname in form["grid"].items():
            _pair_key(key, d, problems, "form.grid")
            path = base_dir / fname
            if not path.exists():
                problems.append(f"form.grid[{key}]: file {str(fname)!r} not found")
                continue
            try:
                _, gdom, _ = read_grid_csv(path)
            except (ValidationError, ValueError) as exc:
                problems.append(f"form.grid[{key}]: {exc}")
                continue
            if gdom.dim != d:
                problems.append(f"form.grid[{key}]: grid has dimension {gdom.dim}, expected {d}")
            elif domain is not None and not gdom.covers(domain):
                problems.append(f"form.grid[{key}]: grid box does not cover the domain")


def _validate_poisson(sec, d, problems):
    funcs = sec.get("functions", {})
    if not funcs:
        problems.append("poisson.functions: at least one function required")
    for name, text in funcs.items():
        try:
            compile_expr(text, d)
        except ValidationError as exc:
            problems.extend(f"poisson.functions.{name}: {p}" for p in exc.problems)
    for group, size in (("brackets", 2), ("jacobi", 3)):
        for item in sec.get(group, []):
            if len(item) != size or any(x not in funcs for x in item):
                problems.append(f"poisson.{group}: {item!r} must name {size} defined functions")
    _number(sec, "points", 5, problems, "poisson", positive=True, integer=True)
    _number(sec, "fd_step", 1e-4, problems, "poisson", positive=True)


def _validate_geodesic(sec, problems):
    n = sec.get("n", 1)
    if not isinstance(n, int) or n < 1:
        problems.append(f"geodesic.n: expected a positive integer, got {n!r}")
        return
    metric = sec.get("metric", "flat")
    if isinstance(metric, dict):
        for key, text in metric.items():
            _pair_key(key, n, problems, "geodesic.metric", allow_diag=True)
            try:
                compile_expr(text, n)
            except ValidationError as exc:
                problems.extend(f"geodesic.metric[{key}]: {p}" for p in exc.problems)
    elif metric not in ("flat", "heaviside"):
        problems.append(f"geodesic.metric: expected flat, heaviside or a table of entries, got {metric!r}")
    states = sec.get("states", [])
    if not states or any(len(s) != 2 * n for s in states):
        problems.append(f"geodesic.states: need at least one state with {2 * n} entries")
    for k in ("t_end", "step", "vmax"):
        _number(sec, k, 1.0, problems, "geodesic", positive=True)


def load_problem(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"problem file {str(path)!r} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"problem file {str(path)!r}: {exc}") from exc
    return parse_problem(data, path.parent)


# -------------------------------------------------------------- builders

def build_form(problem):
    form = problem.section("form")
    n = form.get("n", 1)
    d = 2 * n
    if "corpus" in form:
        params = {k: v for k, v in form.items() if k in ("scale", "metric", "vmax", "fd_step")}
        return corpus(form["corpus"], problem.ladder, n, problem.domain, problem.mollifier, **params)
    if "entries" in form:
        entries = {_pair_key(k, d, [], ""): compile_expr(v, d) for k, v in form["entries"].items()}
        rule, axes = matrix_rule(entries, d)
    else:
        fields = {}
        for k, fname in form["grid"].items():
            _, gdom, vals = read_grid_csv(problem.base_dir / fname)
            fields[_pair_key(k, d, [], "")] = (gdom, vals)
        rule, axes = _grid_rule(fields, d)
    if form.get("mollify", True):
        margin = 2 * problem.mollifier.margin(problem.ladder.values[0])
        box = problem.domain.enlarged(margin)
        if "grid" in form:
            box = next(iter(fields.values()))[0]
        return mollify(RawRule(rule, box, axes), problem.mollifier, problem.ladder,
                       problem.domain, "custom")
    members = [TwoFormField(problem.domain, rule, f"custom[eps={e:g}]") for e in problem.ladder]
    return GenTwoForm(problem.ladder, members, "custom")


def _grid_rule(fields, d):
    from scipy.interpolate import RegularGridInterpolator
    interps = {ij: RegularGridInterpolator(g.axes(), v, bounds_error=False, fill_value=None)
               for ij, (g, v) in fields.items()}

    def rule(p):
        out = np.zeros((len(p), d, d))
        for (i, j), f in interps.items():
            v = f(p)
            out[:, i, j] = v
            out[:, j, i] = -v
        return out

    # convolve only along axes where some sampled component actually varies
    axes = sorted({a for _, v in fields.values() for a in range(v.ndim)
                   if np.ptp(v, axis=a).max() > 0})
    return rule, tuple(axes)


def build_metric(problem):
    sec = problem.section("geodesic")
    n = sec.get("n", 1)
    lo = sec.get("lo", [-1.0] * n)
    hi = sec.get("hi", [1.0] * n)
    base = BoxDomain(tuple(lo), tuple(hi), (101,) * n)
    raw_box = base.enlarged(2 * problem.mollifier.margin(problem.ladder.values[0]))
    metric = sec.get("metric", "flat")
    if isinstance(metric, dict):
        entries = {_pair_key(k, n, [], "", True): compile_expr(v, n) for k, v in metric.items()}
        rule, axes = matrix_rule(entries, n, antisymmetric=False)
        raw = RawRule(rule, raw_box, axes)
    else:
        from .forms import flat_metric_raw, heaviside_metric_raw
        raw = (flat_metric_raw if metric == "flat" else heaviside_metric_raw)(n, raw_box)
    fam = MetricFamily(problem.ladder, raw, problem.mollifier, base, sec.get("fd_step", 1e-5))
    return GeodesicProblem(fam, sec.get("vmax", 1.0))


def pipeline_config(problem, eps_index=None):
    kw = dict(problem.pipeline)
    if "conservation_times" in kw:
        kw["conservation_times"] = tuple(kw["conservation_times"])
    if eps_index is not None:
        kw["eps_indices"] = (eps_index,)
    return DarbouxConfig(**kw)


# -------------------------------------------------------------- reports

def _jsonable(obj):
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_report(out_dir, report, timestamps=True):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if timestamps:
        report["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    else:
        report.pop("timing", None)
    path = out_dir / "report.json"
    path.write_text(json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def _base_report(command, problem):
    return {"command": command, "tool": {"name": "gensympl", "version": __version__},
            "config": problem.raw if problem is not None else None, "status": "ok", "timing": {}}


def _ladder_family(problem):
    sec = problem.section("ladder")
    if "family" not in sec:
        return None
    e = compile_expr(sec["family"], variables=["eps"])
    return EpsScalarFamily(problem.ladder, e(problem.ladder.array[:, None]))


# ------------------------------------------------------------- commands

def cmd_ladder(problem, args):
    report = _base_report("ladder", problem)
    report["ladder"] = problem.ladder.to_dict()
    fam = _ladder_family(problem)
    if fam is not None:
        sec = problem.section("ladder")
        report["samples"] = list(fam.samples)
        report["verdict"] = estimate_order(fam, sec.get("m_target", 10), sec.get("n_max", 20),
                                           sec.get("fit_tol", 0.1)).to_dict()
    return report, EXIT_OK


def _certify(problem, sigma, report, derive=True):
    sec = problem.section("star")
    K = None
    if "lo" in sec:
        K = BoxDomain(tuple(sec["lo"]), tuple(sec["hi"]), tuple(sec.get("grid", problem.domain.grid)))
    tic = time.perf_counter()
    cert = check_star(sigma, K, problem.pipeline.get("k_points"))
    report["certificate"] = cert.to_dict()
    ss = None
    if derive:
        ss = derive_starstar(cert, sigma, problem.center, problem.pipeline.get("t_nodes", 11),
                             problem.pipeline.get("sweep_points", 41))
        report["starstar"] = ss.to_dict()
    report["timing"]["certify_s"] = time.perf_counter() - tic
    return cert, ss


def cmd_star(problem, args):
    report = _base_report("star", problem)
    sigma = build_form(problem)
    _certify(problem, sigma, report, problem.section("star").get("derive", True))
    return report, EXIT_OK


def _residual_grid(sample, R_inner, p, per_axis):
    """Scatter per-point residuals back onto the square grid (NaN outside the ball)."""
    d = len(p)
    dom = BoxDomain(tuple(p - R_inner), tuple(p + R_inner), (per_axis,) * d)
    full = dom.points()
    idx = {tuple(np.round((q - dom.lo_arr) / dom.spacing).astype(int)): k
           for k, q in enumerate(sample["points"])}
    vals = np.full(len(full), np.nan)
    for k, q in enumerate(full):
        j = idx.get(tuple(np.round((q - dom.lo_arr) / dom.spacing).astype(int)))
        if j is not None:
            vals[k] = sample["residual"][j]
    return dom, vals.reshape(dom.grid)


def _run_darboux(problem, args, command):
    report = _base_report(command, problem)
    sigma = build_form(problem)
    cert, ss = _certify(problem, sigma, report)
    config = pipeline_config(problem, args.eps_index)
    tic = time.perf_counter()
    res = darboux_pipeline(sigma, problem.center, config, cert, ss)
    report["timing"]["pipeline_s"] = time.perf_counter() - tic
    report["darboux"] = res.report.to_dict()
    if args.no_timestamps:
        for entry in report["darboux"].get("per_eps", []):
            entry.pop("seconds", None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d = len(problem.center)
    for run, sample in zip(res.report.runs, res.samples):
        tag = f"eps{run.eps:.6g}"
        cols = [f"q{i + 1}" for i in range(d)] + [f"phi{i + 1}" for i in range(d)] + \
               [f"J{i + 1}{j + 1}" for i in range(d) for j in range(d)] + ["residual"]
        table = np.column_stack([sample["points"], sample["values"],
                                 sample["jacobians"].reshape(len(sample["points"]), -1),
                                 sample["residual"]])
        write_table_csv(out / f"phi_{tag}.csv", cols, table, eps=run.eps, L=sample["L"].tolist())
        if d == 2:
            per_axis = _axis_count(sample["points"], run.R_inner, problem.center)
            dom, grid = _residual_grid(sample, run.R_inner, problem.center, per_axis)
            write_grid_csv(out / f"residual_{tag}.csv", dom, grid, f"pullback residual eps={run.eps:g}")
    return report, res, sigma


def _axis_count(points, R, p):
    xs = np.unique(np.round((points[:, 0] - p[0]) / R, 12))
    return len(xs)


def cmd_darboux(problem, args):
    report, _, _ = _run_darboux(problem, args, "darboux")
    return report, EXIT_OK


def cmd_verify(problem, args):
    report, res, sigma = _run_darboux(problem, args, "verify")
    sec = problem.section("verify")
    cfg = pipeline_config(problem, args.eps_index)
    checks = {}

    def check(name, value, bound):
        checks[name] = {"value": value, "bound": bound, "ok": bool(value <= bound)}

    check("starstar_sweep_inv", res.starstar.sweep_max_inv, res.starstar.D)
    for run in res.report.runs:
        tag = f"eps={run.eps:g}"
        check(f"pullback[{tag}]", run.pullback_error, sec.get("pullback_tol", 1e-3))
        check(f"inverse[{tag}]", run.inverse_error, 10 * cfg.flow_tol)
        checks[f"orientation[{tag}]"] = {"value": run.min_det, "bound": 0.0, "ok": bool(run.min_det > 0)}
        check(f"conservation[{tag}]", run.conservation, run.conservation_bound)
        check(f"poincare[{tag}]", run.poincare_defect, cfg.quad_tol)
    form = problem.section("form")
    if form.get("corpus") == "heaviside" and form.get("n", 1) == 1:
        fixture = {}
        for k, run in zip(cfg.eps_indices or range(len(sigma)), res.report.runs):
            fx = jump_fixture(sigma[k], run.eps, problem.mollifier.radius, problem.domain, dx_dxi(1))
            fixture[f"{run.eps:g}"] = fx
            check(f"jump_chart[eps={run.eps:g}]", fx["pullback_error"], 10 * cfg.interp_tol)
        report["jump_chart"] = fixture
    report["checks"] = checks
    ok = all(c["ok"] for c in checks.values())
    report["status"] = "ok" if ok else "verify-failed"
    return report, EXIT_OK if ok else EXIT_NUMERICAL


def _sample_points(domain, per_axis, shrink=0.8):
    c = 0.5 * (domain.lo_arr + domain.hi_arr)
    half = 0.5 * shrink * (domain.hi_arr - domain.lo_arr)
    axes = [np.linspace(a - h, a + h, per_axis) for a, h in zip(c, half)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


# fourth-order central differences; small enough to resolve mollified layers
DEFAULT_BRACKET_FD_STEP = 1e-4


def cmd_poisson(problem, args):
    report = _base_report("poisson", problem)
    sec = problem.section("poisson")
    sigma = build_form(problem)
    k = args.eps_index if args.eps_index is not None else len(sigma) - 1
    member = sigma[k]
    d = problem.domain.dim
    fd = sec.get("fd_step", DEFAULT_BRACKET_FD_STEP)
    funcs = {name: ScalarField(problem.domain, compile_expr(text, d), None, name, fd)
             for name, text in sec["functions"].items()}
    pts = _sample_points(problem.domain, sec.get("points", 5))
    names = list(funcs)
    pairs = sec.get("brackets") or [[a, b] for i, a in enumerate(names) for b in names[i + 1:]]
    cols, table, summary = [], [], {}
    for a, b in pairs:
        vals = poisson_bracket(member, funcs[a], funcs[b], fd)(pts)
        cols.append(f"{{{a},{b}}}")
        table.append(vals)
        summary[f"{{{a},{b}}}"] = {"min": float(vals.min()), "max": float(vals.max())}
    report["eps"] = problem.ladder.values[k]
    report["brackets"] = summary
    report["jacobi"] = {"-".join(t): jacobi_residual(member, *(funcs[x] for x in t), pts, fd)
                        for t in sec.get("jacobi", [])}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table_csv(out / "brackets.csv", [f"x{i + 1}" for i in range(d)] + cols,
                    np.column_stack([pts] + table), eps=report["eps"])
    return report, EXIT_OK


def cmd_geodesic(problem, args):
    report = _base_report("geodesic", problem)
    sec = problem.section("geodesic")
    prob = build_metric(problem)
    idx = None if args.eps_index is None else [args.eps_index]
    tab = geodesic_flow_compare(prob, sec["states"], sec.get("t_end", 2.0), sec.get("step", 1e-3),
                                sec.get("samples", 21), sec.get("flow_tol", 1e-8), idx)
    report["geodesic"] = tab.to_dict()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n2 = 2 * prob.n
    for e, traj in zip(tab.eps, tab.trajectories):
        T, S, _ = traj.shape
        rows = [[tab.times[i], s, *traj[i, s]] for s in range(S) for i in range(T)]
        cols = ["t", "state"] + [f"x{i + 1}" for i in range(prob.n)] + [f"v{i + 1}" for i in range(prob.n)]
        write_table_csv(out / f"geodesic_eps{e:.6g}.csv", cols, np.asarray(rows), eps=e)
    return report, EXIT_OK


EXAMPLES = {
    "heaviside.toml": """\
version = 1
seed = 0

[form]
corpus = "heaviside"
n = 1

[domain]
lo = [-1.0, -1.0]
hi = [1.0, 1.0]
grid = [101, 101]

[ladder]
eps_max = 0.4
eps_min = 0.05
count = 4

[mollifier]
kernel = "bump"
nodes = 64
radius = 1.0

[pipeline]
center = [0.0, 0.0]
step = 1e-3
quad_order = 16
verify_points = 101
""",
    "canonical.toml": """\
version = 1

[form]
corpus = "canonical"
n = 1

[pipeline]
center = [0.0, 0.0]
step = 1e-2
verify_points = 41
""",
    "twice_canonical.toml": """\
version = 1

[form]
corpus = "canonical"
n = 1
scale = 2.0

[pipeline]
center = [0.0, 0.0]
step = 1e-2
verify_points = 41
""",
    "scaled_eps.toml": """\
version = 1

[form]
corpus = "scaled_eps"
n = 1
""",
    "scaled_inv_eps.toml": """\
version = 1

[form]
corpus = "scaled_inv_eps"
n = 1
""",
    "jump_expression.toml": """\
version = 1

[form]
n = 1
mollify = true
entries = { "1,2" = "-(1 + heaviside(x1))" }

[pipeline]
center = [0.0, 0.0]
step = 1e-3
verify_points = 41
""",
    "poisson_canonical.toml": """\
version = 1

[form]
corpus = "canonical"
n = 2

[domain]
lo = [-1.0, -1.0, -1.0, -1.0]
hi = [1.0, 1.0, 1.0, 1.0]
grid = [21, 21, 21, 21]

[poisson]
points = 3
functions = { x1 = "x1", x2 = "x2", xi1 = "x3", xi2 = "x4", f = "x1*x3 + x2^2", g = "x4*x1 - x3^2", h = "x2*x3 + 0.5*x1^2" }
brackets = [["x1", "xi1"], ["x1", "xi2"], ["x2", "xi2"], ["x1", "x2"], ["xi1", "xi2"], ["xi1", "x1"]]
jacobi = [["f", "g", "h"]]
""",
    "geodesic_heaviside.toml": """\
version = 1

[form]
corpus = "tm_metric"
n = 1
metric = "heaviside"

[geodesic]
n = 1
metric = "heaviside"
vmax = 1.0
t_end = 2.0
step = 1e-3
states = [[-0.8, 0.5]]
""",
    "geodesic_flat.toml": """\
version = 1

[form]
corpus = "tm_metric"
n = 1
metric = "flat"

[geodesic]
n = 1
metric = "flat"
t_end = 1.0
step = 1e-2
states = [[-0.5, 0.3], [0.2, -0.4]]
""",
}


def cmd_examples(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in EXAMPLES.items():
        (out / name).write_text(text, encoding="utf-8")
    return {"command": "examples", "written": sorted(EXAMPLES), "status": "ok",
            "tool": {"name": "gensympl", "version": __version__}}, EXIT_OK


COMMANDS = {"ladder": cmd_ladder, "star": cmd_star, "darboux": cmd_darboux, "verify": cmd_verify,
            "poisson": cmd_poisson, "geodesic": cmd_geodesic}


def build_parser():
    parser = argparse.ArgumentParser(prog="gensympl", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS) + ["examples"])
    parser.add_argument("--problem", help="problem file (TOML)")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--no-timestamps", action="store_true",
                        help="omit wall-clock data so reports are byte-identical across runs")
    parser.add_argument("--eps-index", type=int, default=None, help="run a single ladder member")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    problem = None
    try:
        if args.command == "examples":
            report, code = cmd_examples(args)
        else:
            if not args.problem:
                raise ValidationError("--problem is required", ["--problem: missing"])
            problem = load_problem(args.problem)
            if args.eps_index is not None and not 0 <= args.eps_index < len(problem.ladder):
                raise ValidationError(f"--eps-index {args.eps_index} outside the ladder",
                                      [f"--eps-index: must be in 0..{len(problem.ladder) - 1}"])
            report, code = COMMANDS[args.command](problem, args)
    except ValidationError as exc:
        report = _base_report(args.command, problem)
        report.update(status="invalid", errors=exc.problems)
        code = EXIT_VALIDATION
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
    except CertificationError as exc:
        report = _base_report(args.command, problem)
        report.update(status="star-failed", message=str(exc), details=exc.details)
        code = EXIT_CERT
        print(f"certification failed: {exc}", file=sys.stderr)
    except NumericalError as exc:
        report = _base_report(args.command, problem)
        report.update(status="numerical-failure", message=str(exc), details=exc.details)
        code = EXIT_NUMERICAL
        print(f"numerical failure: {exc}", file=sys.stderr)
    report["exit_code"] = code
    path = write_report(args.out, report, not args.no_timestamps)
    print(path)
    return code


if __name__ == "__main__":
    sys.exit(main())
