"""``lab`` command line: scenario runner, catalog and one-shot tools.

Scenario files are JSON with a ``schema`` version, a space builder, a
solution recipe, a time grid and an ordered list of checks. Running one
writes ``report.json`` plus CSV tables into the output directory.
Exit status: 0 when every asserted check passes, 1 when a check fails
(the report is still written), 2 when the configuration cannot be parsed.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .energy import check_energy_identities, intrinsic_distance, intrinsic_metric
from .errors import LabError
from .projection import (GroupAction, build_quotient, builtin_quotients, distance_compatibility,
                         generator_gap, lift_solution, load_action, radial_demo,
                         verify_kernel_projection)
from .semigroup import AtomicMeasure, HeatEngine, dump_kernel_csv
from .solutions import (HarnackWindow, SpaceTimeFunction, check_solution, combine_grids,
                        extend_by_zero, harnack_constant, heat_grid, influx_solution,
                        load_solution, semigroup_solution)
from .space import (Subdomain, ball_exhaustion, build_cycle, build_grid_2d, build_path,
                    build_random, grid_index, load_space)
from .widder import (perturbed_decomposition, verify_uniqueness, widder_global_decompose,
                     widder_local_decompose)

SCHEMA_VERSION = 1


class ConfigError(Exception):
    """The scenario or command line cannot be interpreted."""


# -- spaces ---------------------------------------------------------------

def _boundary(spec):
    if "boundary" in spec:
        b = spec["boundary"]
        return tuple(b) if isinstance(b, list) else b
    return (spec.get("left", "reflecting"), spec.get("right", "reflecting"))


def build_space(spec):
    """Build a space from ``{"builder": ..., **params}``."""
    if not isinstance(spec, dict) or "builder" not in spec:
        raise ConfigError("space needs a 'builder'")
    kind = spec["builder"]
    try:
        if kind == "cycle":
            return build_cycle(int(spec["n"]), spec.get("weight", 1.0), spec.get("mu", 1.0))
        if kind == "path":
            return build_path(int(spec["n"]), spec.get("spacing", 1.0), _boundary(spec),
                              spec.get("diffusivity", 1.0))
        if kind == "grid":
            return build_grid_2d(int(spec["nx"]), int(spec["ny"]), spec.get("spacing", 1.0),
                                 [tuple(h) for h in spec.get("holes", [])],
                                 spec.get("diffusivity", 1.0))
        if kind == "random":
            return build_random(int(spec["n"]), int(spec.get("seed", 0)),
                                spec.get("edge_prob", 0.2), spec.get("killing_prob", 0.0))
        if kind == "file":
            return load_space(spec["path"])
    except KeyError as exc:
        raise ConfigError(f"space builder {kind!r} is missing {exc}") from exc
    raise ConfigError(f"unknown space builder {kind!r}")


def parse_space_arg(text):
    """A JSON file path, or ``builder:key=value,...`` such as ``cycle:n=6``."""
    if os.path.exists(text):
        return load_space(text)
    kind, _, rest = text.partition(":")
    spec = {"builder": kind}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"bad space parameter {item!r}")
        try:
            spec[key] = json.loads(value)
        except json.JSONDecodeError:
            spec[key] = value
    return build_space(spec)


def resolve_vertex(spec, v):
    """Integers index vertices directly; ``[i, j]`` pairs address grids."""
    if isinstance(v, (list, tuple)):
        if spec.get("builder") != "grid" or spec.get("holes"):
            raise ConfigError("grid coordinates need a grid without holes")
        return grid_index(int(spec["nx"]), int(spec["ny"]), int(v[0]), int(v[1]))
    return int(v)


# -- times and solutions --------------------------------------------------

def build_times(spec, extra=()):
    kind = spec.get("kind", "heat")
    extra = list(extra)
    if kind == "list":
        return combine_grids(spec["values"], extra)
    if kind == "linspace":
        return combine_grids(np.linspace(spec["start"], spec["stop"], int(spec["num"])), extra)
    if kind == "heat":
        opts = {k: spec[k] for k in ("t_min", "t_switch", "n_log", "step") if k in spec}
        T = float(spec["T"])
        grid = heat_grid(T, extra=extra, **opts)
        offset = float(spec.get("offset", 0.0))
        if offset > 0:
            grid = combine_grids(grid, offset + heat_grid(T - offset, **opts))
            grid = grid[grid <= T]
        return grid
    raise ConfigError(f"unknown time grid kind {kind!r}")


@dataclass
class Context:
    space: object
    engine: HeatEngine
    u: SpaceTimeFunction
    seed: int
    info: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)


def build_solution(spec, space_spec, space, times):
    recipe = spec.get("recipe")
    if recipe == "semigroup-from-measure":
        eng = HeatEngine(space)
        mass = np.zeros(space.n)
        for v, m in spec.get("atoms", []):
            mass[resolve_vertex(space_spec, v)] += float(m)
        f = None
        if "density" in spec:
            f = np.full(space.n, float(spec["density"]))
        u = semigroup_solution(eng, times, f=f, nu=AtomicMeasure(mass) if mass.any() else None,
                               label="P_t nu")
        return space, eng, u, {"nu0": mass}
    if recipe == "boundary-influx":
        source = resolve_vertex(space_spec, spec["source"])
        exclude = {resolve_vertex(space_spec, v) for v in spec.get("exclude", [])} | {source}
        members = [v for v in range(space.n) if v not in exclude]
        sub, u = influx_solution(space, members, source, times, delay=spec.get("delay", 0.0))
        return sub, HeatEngine(sub), u, {"members": members}
    if recipe == "constant":
        eng = HeatEngine(space)
        if not space.is_conservative:
            raise ConfigError("a constant is a solution only on a conservative space")
        vals = np.full((times.size, space.n), float(spec.get("value", 1.0)))
        return space, eng, SpaceTimeFunction(space, times, vals, nonnegative=True), {}
    if recipe == "eigen":
        eng = HeatEngine(space)
        lam = eng.spectrum[0]
        phi = eng.basis[:, 0]
        phi = phi * np.sign(phi.sum())
        phi = np.maximum(phi, 0.0)
        vals = np.exp(-lam * times)[:, None] * phi[None, :]
        u = SpaceTimeFunction(space, times, vals, nonnegative=True, label="e^{-lt} phi")
        return space, eng, u, {"nu0": phi * space.mu, "lambda0": float(lam)}
    if recipe == "one-minus-survival":
        eng = HeatEngine(space)
        vals = np.maximum(1.0 - eng.evolve(times, np.ones(space.n)), 0.0)
        dom = Subdomain(space, np.flatnonzero(space.killing == 0))
        u = SpaceTimeFunction(space, times, vals, domain=dom, nonnegative=True, label="1 - P_t 1")
        return space, eng, u, {"nu0": np.zeros(space.n)}
    if recipe == "csv":
        eng = HeatEngine(space)
        return space, eng, load_solution(space, spec["path"]), {}
    raise ConfigError(f"unknown solution recipe {recipe!r}")


# -- checks ---------------------------------------------------------------

@dataclass
class Outcome:
    values: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    informational: bool = False

    def bound(self, key, value, limit):
        """Record value <= limit as an asserted residual."""
        value = float(value)
        self.residuals[key] = {"value": value, "limit": float(limit)}
        if not value <= limit:
            self.failures.append(f"{key} = {value:.3e} > {limit:.3e}")

    def require(self, key, ok, note=""):
        self.values[key] = bool(ok)
        if not ok:
            self.failures.append(f"{key} failed{': ' + note if note else ''}")


def _subdomain(ctx, which):
    u = ctx.u
    if which in (None, "interior"):
        return Subdomain(ctx.space, u.domain.interior)
    if which == "domain":
        return u.domain
    if which == "all":
        return Subdomain(ctx.space, range(ctx.space.n))
    return Subdomain(ctx.space, [int(v) for v in which])


def _h_profile(dec, samples=6):
    t = dec.h.times
    picks = np.unique(np.linspace(0, t.size - 1, samples).round().astype(int))
    rows = [["t", "vertex", "h", "h_raw"]]
    for k in picks:
        for x in dec.domain.members:
            rows.append([t[k], int(x), dec.h.values[k, x], dec.h_raw[k, x]])
    return rows


def _decomposition_outcome(ctx, dec, check, out, tag):
    u = ctx.u
    m = dec.domain.members
    exp = check.get("expect", {})
    h_max = float(np.abs(dec.h.values[:, m]).max())
    u_minus_h = float(np.abs(u.values[:, m] - dec.h.values[:, m]).max())
    out.values.update({"nu_total": dec.nu.total, "h_max": h_max, "u_minus_h": u_minus_h,
                       "nu_support": [int(v) for v in dec.nu.support],
                       "h_nonnegativity_slack": dec.h_nonnegativity_slack,
                       "tolerance": dec.tolerance, "diagnostics": dec.to_dict()["diagnostics"]})
    if "nu_total" in exp:
        out.bound("nu_total", dec.nu.total, exp["nu_total"])
    if "h_max" in exp:
        out.bound("h_max", h_max, exp["h_max"])
    if "u_minus_h" in exp:
        out.bound("u_minus_h", u_minus_h, exp["u_minus_h"])
    if "reconstruction" in exp:
        out.bound("reconstruction", dec.reconstruction_residual, exp["reconstruction"])
    if "nu_target" in exp:
        target = np.zeros(ctx.space.n)
        spec = exp["nu_target"]
        if spec == "initial":
            target = np.asarray(ctx.info["nu0"], float)
        else:
            for v, mass in spec:
                target[int(v)] += float(mass)
        gap = float(np.abs(dec.nu.mass - target).sum())
        out.bound("nu_error", gap, exp.get("nu_tol", 1e-3) * max(1.0, target.sum()))
    if "extend_residual" in exp:
        ext = extend_by_zero(dec.h, exp.get("extend_check_tol", 1e-6))
        r, tol, ok = check_solution(ctx.space, ext)
        out.bound("extend_residual", r, exp["extend_residual"])
        out.require("extend_passes_residual_model", ok, f"{r:.3e} > {tol:.3e}")
    ctx.tables[f"{tag}-eps-trace.csv"] = [["eps", "l1_gap"]] + [list(p) for p in dec.eps_trace]
    ctx.tables[f"{tag}-h-profile.csv"] = _h_profile(dec)


def op_solution_residual(ctx, check):
    out = Outcome()
    where = None if check.get("where") in (None, "interior") else check["where"]
    r, tol, ok = check_solution(ctx.space, ctx.u, where)
    out.values["tolerance"] = float(tol)
    out.bound("residual", r, tol)
    if "max" in check:
        out.bound("residual_abs", r, check["max"])
    return out


def op_widder_local(ctx, check):
    out = Outcome()
    U = _subdomain(ctx, check.get("U"))
    dec = widder_local_decompose(ctx.engine, ctx.u, U, check["eps"])
    _decomposition_outcome(ctx, dec, check, out, check.get("name", "widder-local"))
    return out


def op_widder_global(ctx, check):
    out = Outcome()
    center = int(check.get("exhaustion", {}).get("center", 0))
    ex = ball_exhaustion(ctx.space, center)
    dec = widder_global_decompose(ctx.engine, ctx.u, ex, check["eps"])
    out.values["stages"] = len(ex)
    _decomposition_outcome(ctx, dec, check, out, check.get("name", "widder-global"))
    return out


def op_uniqueness(ctx, check):
    out = Outcome()
    U = _subdomain(ctx, check.get("U", "all"))
    dec1 = widder_local_decompose(ctx.engine, ctx.u, U, check["eps_a"])
    dec2 = widder_local_decompose(ctx.engine, ctx.u, U, check["eps_b"])
    tests = [np.ones(ctx.space.n)] + [np.eye(ctx.space.n)[x] for x in U.members]
    rep = verify_uniqueness(ctx.engine, ctx.u, dec1, dec2, tests)
    out.bound("nu_gap", rep["nu_gap"], check.get("expect", {}).get("nu_gap", 1e-3))
    out.require("independent_grids_not_flagged", not rep["flagged"])
    cf = check.get("counterfeit")
    if cf:
        y = int(cf["vertex"])
        fake = perturbed_decomposition(ctx.engine, dec1, y, float(cf.get("amount", 0.1)))
        frep = verify_uniqueness(ctx.engine, ctx.u, dec1, fake, tests)
        out.require("counterfeit_flagged", frep["flagged"])
        out.values["counterfeit_broken"] = frep["broken_invariants"]["dec2"]
        out.values["counterfeit_nu_gap"] = frep["nu_gap"]
    return out


def _action_for(space, spec):
    if "shift" in spec:
        return GroupAction.shift(space, int(spec["shift"]))
    if spec.get("reflection"):
        return GroupAction.reflection(space)
    if "generators" in spec:
        return GroupAction(space, spec["generators"])
    if "file" in spec:
        return load_action(space, spec["file"])
    raise ConfigError("action needs 'shift', 'reflection', 'generators' or 'file'")


def _quotient_gaps(space1, action, times, tol):
    space2, q = build_quotient(space1, action)
    e1, e2 = HeatEngine(space1), HeatEngine(space2)
    gaps = [verify_kernel_projection(e1, e2, q, t, tol=np.inf) for t in times]
    return space2, q, e1, e2, gaps


def op_kernel_projection(ctx, check):
    out = Outcome()
    times = [float(t) for t in check.get("times", [1e-3, 0.1, 1.0, 10.0])]
    tol = float(check.get("tol", 1e-10))
    space2, q, e1, e2, gaps = _quotient_gaps(ctx.space, _action_for(ctx.space, check["action"]),
                                             times, tol)
    out.values["quotient"] = q.to_dict()
    out.bound("kernel_gap", max(gaps), tol)
    f = np.random.default_rng(ctx.seed).standard_normal(space2.n)
    out.bound("generator_gap", generator_gap(q, f), 1e-12)
    rows = [["t", "z", "z2", "p2", "folded"]]
    for t in times:
        P1, P2 = e1.kernel_matrix(t), e2.kernel_matrix(t)
        for z in range(space2.n):
            for zp in range(space2.n):
                rows.append([t, z, zp, P2[z, zp], P1[q.fibers[z][0], q.fibers[zp]].sum()])
    ctx.tables["kernel-projection.csv"] = rows
    for t, z, zp, expected, vtol in check.get("values", []):
        p2 = e2.heat_kernel(t, z, zp)
        out.bound(f"p2({t},{z},{zp})", abs(p2 - expected), vtol)
        out.values[f"p2({t},{z},{zp})"] = p2
    if check.get("builtin"):
        worst = {}
        for name, s1, act in builtin_quotients():
            worst[name] = max(_quotient_gaps(s1, act, times, tol)[4])
        out.values["builtin_gaps"] = worst
        out.bound("builtin_kernel_gap", max(worst.values()), tol)
    if check.get("distance"):
        lo1, hi1 = intrinsic_metric(ctx.space)
        lo2, hi2 = intrinsic_metric(space2)
        out.values["distance_compatibility"] = distance_compatibility(q, hi1, hi2)
    return out


def op_quotient_widder(ctx, check):
    """Decompose on the quotient then lift nu, versus lift then decompose."""
    out = Outcome()
    action = _action_for(ctx.space, check["action"])
    space2, q = build_quotient(ctx.space, action)
    e2 = HeatEngine(space2)
    z = int(check.get("atom", 0))
    times = ctx.u.times
    u2 = semigroup_solution(e2, times, nu=AtomicMeasure.delta(space2.n, z))
    v = lift_solution(q, u2)
    r2, _, _ = check_solution(space2, u2)
    rv, tolv, _ = check_solution(ctx.space, v)
    out.bound("lift_residual_excess", rv - r2, 1e-12)
    U2 = Subdomain(space2, range(space2.n))
    U1 = Subdomain(ctx.space, range(ctx.space.n))
    dec2 = widder_local_decompose(e2, u2, U2, check["eps"])
    dec1 = widder_local_decompose(ctx.engine, v, U1, check["eps"])
    gap = float(np.abs(dec1.nu.mass - q.lift_measure(dec2.nu).mass).sum())
    out.bound("lifted_nu_gap", gap, check.get("tol", 1e-3))
    return out


def op_harnack(ctx, check):
    out = Outcome()
    K = [resolve_vertex(ctx.info.get("space_spec", {}), v) for v in check["K"]]
    rows = [["a", "b", "c", "d", "source", "ratio"]]
    consts = []
    for a, b, c, d in check["windows"]:
        w = HarnackWindow(a, b, c, d, tuple(K))
        C, per = harnack_constant(ctx.engine, w, samples=int(check.get("samples", 41)))
        consts.append(C)
        for y, ratio in sorted(per.items()):
            rows.append([a, b, c, d, int(y), ratio])
    ctx.tables["harnack.csv"] = rows
    out.values["constants"] = [float(c) for c in consts]
    out.require("constants_finite", all(np.isfinite(consts)))
    out.require("constants_at_least_one", all(c >= 1.0 for c in consts))
    return out


def op_energy_identities(ctx, check):
    out = Outcome()
    rng = np.random.default_rng(ctx.seed)
    n = ctx.space.n
    trials = int(check.get("trials", 100))
    tol = float(check.get("tol", 1e-12))
    bad, worst = 0, {}
    for _ in range(trials):
        f, g, h, k = rng.standard_normal((4, n))
        rep = check_energy_identities(ctx.space, f, g, h, k, tol=tol)
        bad += not rep.passed
        for key in ("leibniz_naive", "leibniz_symmetrized"):
            worst[key] = max(worst.get(key, 0.0), getattr(rep, key))
        for key in ("cauchy_schwarz_slack", "amgm_slack", "product_bound_slack"):
            worst[key] = min(worst.get(key, np.inf), getattr(rep, key))
    out.values.update(worst)
    out.values["trials"] = trials
    out.bound("violations", bad, 0)
    return out


def op_intrinsic_distance(ctx, check):
    out = Outcome()
    gaps = []
    for x, y, *rest in check["pairs"]:
        lo, hi = intrinsic_distance(ctx.space, int(x), int(y))
        gaps.append(hi - lo)
        out.values[f"d({x},{y})"] = [lo, hi]
        if rest:
            expected, vtol = rest
            out.bound(f"d({x},{y})_error", abs(0.5 * (lo + hi) - expected), vtol)
    out.bound("bracket_gap", max(gaps), check.get("gap", 1e-6))
    return out


def op_kernel_slice(ctx, check):
    out = Outcome()
    rows = [["t", "x", "y", "p"]]
    y = int(check.get("source", 0))
    for t in check["times"]:
        P = ctx.engine.kernel_matrix(float(t))
        rows += [[float(t), x, y, P[x, y]] for x in range(ctx.space.n)]
    ctx.tables["kernel-slice.csv"] = rows
    for t, x, yy, expected, vtol in check.get("values", []):
        p = ctx.engine.heat_kernel(t, x, yy)
        out.values[f"p({t},{x},{yy})"] = p
        out.bound(f"p({t},{x},{yy})_error", abs(p - expected), vtol)
    return out


def op_radial_demo(ctx, check):
    out = Outcome(informational=True)
    rows = radial_demo(int(check.get("n", 21)), check.get("spacing", 0.25), check.get("t", 0.5))
    ctx.tables["radial-profile.csv"] = [["r", "mean", "spread"]] + [list(r) for r in rows]
    out.values["approximate"] = True
    out.values["max_spread"] = max(r[2] for r in rows)
    return out


OPS = {
    "solution-residual": op_solution_residual,
    "widder-local": op_widder_local,
    "widder-global": op_widder_global,
    "uniqueness": op_uniqueness,
    "kernel-projection": op_kernel_projection,
    "quotient-widder": op_quotient_widder,
    "harnack": op_harnack,
    "energy-identities": op_energy_identities,
    "intrinsic-distance": op_intrinsic_distance,
    "kernel-slice": op_kernel_slice,
    "radial-demo": op_radial_demo,
}


# -- scenarios ------------------------------------------------------------

@dataclass
class Scenario:
    name: str
    description: str
    space: dict
    solution: dict
    times: dict
    checks: list
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("scenario must be a JSON object")
        if d.get("schema") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema {d.get('schema')!r}, expected {SCHEMA_VERSION}")
        for key in ("name", "space", "checks"):
            if key not in d:
                raise ConfigError(f"scenario is missing {key!r}")
        checks = d["checks"]
        if not isinstance(checks, list) or not checks:
            raise ConfigError("scenario needs a nonempty check list")
        for c in checks:
            if c.get("op") not in OPS:
                raise ConfigError(f"unknown check operation {c.get('op')!r}")
            _validate_tolerances(c)
        return cls(d["name"], d.get("description", ""), d["space"],
                   d.get("solution", {"recipe": "constant"}),
                   d.get("times", {"kind": "linspace", "start": 0.01, "stop": 1.0, "num": 100}),
                   checks, int(d.get("seed", 0)))


def _validate_tolerances(check):
    for key, val in check.get("expect", {}).items():
        if isinstance(val, (int, float)) and not isinstance(val, bool) and not val > 0:
            raise ConfigError(f"tolerance {key!r} must be positive")
    for key in ("tol", "gap"):
        if key in check and not float(check[key]) > 0:
            raise ConfigError(f"tolerance {key!r} must be positive")
    for row in check.get("values", []):
        if not float(row[-1]) > 0:
            raise ConfigError("kernel-slice tolerances must be positive")


def _builtin_dir():
    return resources.files("heatlab") / "scenarios"


def builtin_names():
    return sorted(p.name[:-5] for p in _builtin_dir().iterdir() if p.name.endswith(".json"))


def load_scenario(ref):
    """A path to a scenario file or the name of a built-in scenario."""
    path = Path(ref)
    try:
        if path.exists():
            text = path.read_text()
        elif ref in builtin_names():
            text = (_builtin_dir() / f"{ref}.json").read_text()
        else:
            raise ConfigError(f"no scenario file or built-in named {ref!r}")
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse scenario: {exc}") from exc
    return Scenario.from_dict(data)


def list_scenarios():
    out = []
    for name in builtin_names():
        sc = load_scenario(name)
        out.append({"name": sc.name, "description": sc.description,
                    "checks": [c["op"] for c in sc.checks]})
    return out


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def run_scenario(scenario: Scenario, out_dir=None, seed=None):
    """Run every check in order; returns (exit status, report dict) and
    writes report.json and CSV tables when ``out_dir`` is given."""
    seed = scenario.seed if seed is None else int(seed)
    try:
        space = build_space(scenario.space)
        eps = sorted({e for c in scenario.checks for key in ("eps", "eps_a", "eps_b")
                      for e in c.get(key, [])})
        times = build_times(scenario.times, extra=eps)
        space, engine, u, info = build_solution(scenario.solution, scenario.space, space, times)
    except LabError as exc:
        raise ConfigError(f"scenario setup failed: {exc}") from exc
    info["space_spec"] = scenario.space
    ctx = Context(space, engine, u, seed, info)
    results = []
    status = 0
    for check in scenario.checks:
        name = check.get("name", check["op"])
        try:
            outcome = OPS[check["op"]](ctx, check)
            if outcome.informational:
                state = "info"
            else:
                state = "fail" if outcome.failures else "pass"
            entry = {"name": name, "op": check["op"], "status": state,
                     "residuals": outcome.residuals, "values": outcome.values,
                     "failures": outcome.failures}
        except LabError as exc:
            entry = {"name": name, "op": check["op"], "status": "error",
                     "residuals": {}, "values": {},
                     "failures": [f"{type(exc).__name__}: {exc}"]}
        if entry["status"] in ("fail", "error"):
            status = 1
        results.append(entry)
    report = _clean({"scenario": scenario.name, "schema": SCHEMA_VERSION, "seed": seed,
                     "space": {"n": space.n, "hash": space.content_hash()},
                     "checks": results})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
            fh.write("\n")
        for fname, rows in sorted(ctx.tables.items()):
            with open(out / fname, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(rows[0])
                for row in rows[1:]:
                    w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                                for v in row])
    return status, report


# -- command line ---------------------------------------------------------

def _cmd_run(args):
    sc = load_scenario(args.config)
    out = args.out or os.path.join("lab-out", sc.name)
    status, report = run_scenario(sc, out, seed=args.seed)
    for c in report["checks"]:
        print(f"{c['status']:>5}  {c['name']}" + (f"  ({'; '.join(c['failures'])})"
                                                  if c["failures"] else ""))
    print(f"report: {os.path.join(out, 'report.json')}")
    return status


def _cmd_list(args):
    cat = list_scenarios()
    if args.json:
        print(json.dumps(cat, indent=1, sort_keys=True))
    else:
        for entry in cat:
            print(f"{entry['name']:<24} {entry['description']}")
    return 0


def _parse_pairs(items, n):
    if not items:
        return [(0, y) for y in range(n)]
    pairs = []
    for item in items:
        x, _, y = item.partition(",")
        pairs.append((int(x), int(y)))
    return pairs


def _cmd_kernel(args):
    space = parse_space_arg(args.space)
    eng = HeatEngine(space)
    pairs = _parse_pairs(args.pairs, space.n)
    if args.dump:
        with open(args.dump, "w", newline="") as fh:
            dump_kernel_csv(eng, args.t, pairs, fh)
    else:
        dump_kernel_csv(eng, args.t, pairs, sys.stdout)
    return 0


def _cmd_decompose(args):
    space = parse_space_arg(args.space)
    eng = HeatEngine(space)
    u = load_solution(space, args.solution)
    if args.global_:
        dec = widder_global_decompose(eng, u, ball_exhaustion(space, args.center), args.eps)
    else:
        U = Subdomain(space, args.domain if args.domain else u.domain.interior)
        dec = widder_local_decompose(eng, u, U, args.eps)
    text = json.dumps(_clean(dec.to_dict()), indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _cmd_harnack(args):
    space = parse_space_arg(args.space)
    w = HarnackWindow(*args.window, tuple(args.K))
    C, per = harnack_constant(HeatEngine(space), w, sources=args.sources, samples=args.samples)
    print(json.dumps(_clean({"constant": C, "per_source": per}), indent=1, sort_keys=True))
    return 0


def _cmd_quotient(args):
    space = parse_space_arg(args.space)
    if args.action:
        action = load_action(space, args.action)
    elif args.shift is not None:
        action = GroupAction.shift(space, args.shift)
    elif args.reflect:
        action = GroupAction.reflection(space)
    else:
        action = GroupAction.trivial(space)
    space2, q, _, _, gaps = _quotient_gaps(space, action, args.t, 1e-10)
    rep = q.to_dict()
    rep["kernel_gaps"] = dict(zip(map(repr, args.t), gaps))
    text = json.dumps(_clean(rep), indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0 if max(gaps) <= 1e-10 else 1


def _cmd_energy_check(args):
    space = parse_space_arg(args.space)
    ctx = Context(space, None, None, args.seed)
    out = op_energy_identities(ctx, {"trials": args.trials})
    rep = {"values": out.values, "failures": out.failures}
    if args.distance:
        x, y = args.distance
        lo, hi = intrinsic_distance(space, x, y)
        rep["intrinsic_distance"] = [lo, hi]
    print(json.dumps(_clean(rep), indent=1, sort_keys=True))
    return 1 if out.failures else 0


def make_parser():
    p = argparse.ArgumentParser(prog="lab", description="Heat semigroup laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file or built-in scenario")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default lab-out/<name>)")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.set_defaults(func=_cmd_run)

    ls = sub.add_parser("list", help="list built-in scenarios")
    ls.add_argument("--json", action="store_true")
    ls.set_defaults(func=_cmd_list)

    k = sub.add_parser("kernel", help="print or dump heat kernel values")
    k.add_argument("space", help="space file or builder spec such as cycle:n=6")
    k.add_argument("--t", type=float, nargs="+", required=True)
    k.add_argument("--pairs", nargs="*", help="x,y pairs (default 0,y for all y)")
    k.add_argument("--dump", help="CSV output file")
    k.set_defaults(func=_cmd_kernel)

    d = sub.add_parser("decompose", help="Widder decomposition of a stored solution")
    d.add_argument("space")
    d.add_argument("solution", help="solution CSV (t, vertex, value)")
    d.add_argument("--eps", type=float, nargs="+", required=True)
    d.add_argument("--domain", type=int, nargs="*")
    d.add_argument("--global", dest="global_", action="store_true")
    d.add_argument("--center", type=int, default=0)
    d.add_argument("--out")
    d.set_defaults(func=_cmd_decompose)

    h = sub.add_parser("harnack", help="empirical Harnack constant of the kernel family")
    h.add_argument("space")
    h.add_argument("--window", type=float, nargs=4, required=True, metavar=("A", "B", "C", "D"))
    h.add_argument("--K", type=int, nargs="+", required=True)
    h.add_argument("--sources", type=int, nargs="*")
    h.add_argument("--samples", type=int, default=41)
    h.set_defaults(func=_cmd_harnack)

    q = sub.add_parser("quotient", help="quotient by a group action and check kernel folding")
    q.add_argument("space")
    g = q.add_mutually_exclusive_group()
    g.add_argument("--action", help="JSON file with generator permutations")
    g.add_argument("--shift", type=int)
    g.add_argument("--reflect", action="store_true")
    q.add_argument("--t", type=float, nargs="+", default=[1e-3, 0.1, 1.0, 10.0])
    q.add_argument("--out")
    q.set_defaults(func=_cmd_quotient)

    e = sub.add_parser("energy-check", help="randomized energy identity trials")
    e.add_argument("space")
    e.add_argument("--trials", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--distance", type=int, nargs=2, metavar=("X", "Y"))
    e.set_defaults(func=_cmd_energy_check)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"lab: configuration error: {exc}", file=sys.stderr)
        return 2
    except LabError as exc:
        print(f"lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
