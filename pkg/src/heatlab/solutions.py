"""Space-time functions sampled on a time grid, local-solution residuals and
the inequality checks around nonnegative solutions: Harnack ratios,
Caccioppoli, extension by zero, maximum principle, minimality and the
local L1 mass bound.

A function "solves" on a subdomain when dt u + L u = 0 holds at every
interior vertex; that is the finite-space form of testing only against
functions compactly supported in the domain.
"""

import csv
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import trapezoid

from .energy import CutoffFunction
from .errors import (ExtensionRefused, InsufficientData, InvalidCutoff,
                     InvalidInput, InvalidWindow)
from .semigroup import AtomicMeasure, HeatEngine, engine_for
from .space import DirichletSpace, Exhaustion, Subdomain, ball_exhaustion, restrict

NONNEG_TOL = 1e-12
EPS = np.finfo(float).eps


class SpaceTimeFunction:
    """Values u(t_k, x) on a strictly increasing time grid.

    ``domain`` is the subdomain on which u claims to solve the heat
    equation (the whole space by default). Values are stored for every
    vertex of ``space``.
    """

    def __init__(self, space: DirichletSpace, times, values, domain: Subdomain = None,
                 nonnegative=False, label=None):
        times = np.array(times, dtype=float).ravel()
        values = np.array(values, dtype=float)
        if values.ndim != 2 or values.shape != (times.size, space.n):
            raise InvalidInput(f"values must have shape ({times.size}, {space.n})")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise InvalidInput("times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise InvalidInput("values must be finite")
        if nonnegative and values.size and values.min() < -NONNEG_TOL * max(1.0, np.abs(values).max()):
            raise InvalidInput(f"function flagged nonnegative has min {values.min():.3e}")
        if domain is None:
            domain = Subdomain(space, range(space.n))
        elif domain.parent is not space:
            raise InvalidInput("domain belongs to a different space")
        times.setflags(write=False)
        values.setflags(write=False)
        self.space = space
        self.times = times
        self.values = values
        self.domain = domain
        self.nonnegative = nonnegative
        self.label = label

    def __repr__(self):
        return (f"<SpaceTimeFunction {self.label or ''} m={self.times.size} "
                f"n={self.space.n} t=[{self.times[0]:.3g}, {self.times[-1]:.3g}]>")

    @property
    def m(self):
        return self.times.size

    def index_of(self, t, rtol=1e-9):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > rtol * max(1.0, abs(t)):
            raise InvalidInput(f"time {t} is not on the grid")
        return k

    def at(self, t):
        return self.values[self.index_of(t)]

    def with_values(self, values, **kw):
        opts = dict(domain=self.domain, nonnegative=self.nonnegative, label=self.label)
        opts.update(kw)
        return SpaceTimeFunction(self.space, self.times, values, **opts)

    def __add__(self, other):
        if other.space is not self.space or not np.array_equal(other.times, self.times):
            raise InvalidInput("can only add functions on the same space and grid")
        return self.with_values(self.values + other.values,
                                nonnegative=self.nonnegative and other.nonnegative)

    def scaled(self, c):
        return self.with_values(self.values * c, nonnegative=self.nonnegative and c >= 0)

    def is_nonnegative(self, tol=NONNEG_TOL):
        return bool(self.values.min() >= -tol * max(1.0, np.abs(self.values).max()))


# -- constructors ---------------------------------------------------------

def semigroup_solution(engine: HeatEngine, times, f=None, nu: AtomicMeasure = None, label=None):
    """u(t) = P_t f + P_t nu sampled on ``times``."""
    times = np.asarray(times, dtype=float)
    vals = np.zeros((times.size, engine.n))
    nonneg = True
    if f is not None:
        f = np.asarray(f, dtype=float)
        vals += engine.evolve(times, f)
        nonneg = nonneg and bool(np.all(f >= 0))
    if nu is not None:
        vals += engine.evolve_measure(times, nu)
    vals = np.where(np.abs(vals) < 1e-300, 0.0, vals)
    if nonneg:
        # positivity is exact for f, nu >= 0; negatives are rounding
        vals = np.maximum(vals, 0.0)
    return SpaceTimeFunction(engine.space, times, vals, nonnegative=nonneg, label=label)


def kernel_solution(engine: HeatEngine, times, y, label=None):
    """u(t, x) = p(t, x, y), the solution started from a unit atom at y."""
    return semigroup_solution(engine, times, nu=AtomicMeasure.delta(engine.n, y),
                              label=label or f"p(t,.,{y})")


def influx_solution(parent: DirichletSpace, members, source, times, delay=0.0):
    """Heat released at ``source`` outside a region, seen from inside.

    Returns ``(space, u)`` where ``space = restrict(parent, members)`` and
    u(t, x) = p_parent(t - delay, x, source) for t > delay, zero before.
    The function solves on the interior of ``space`` but not at vertices
    next to the source, where heat enters through the boundary.
    """
    members = np.unique(np.asarray(list(members), dtype=np.int64))
    if source in set(members.tolist()):
        raise InvalidInput("source must lie outside the region")
    space = restrict(parent, members)
    eng = engine_for(parent)
    times = np.asarray(times, dtype=float)
    vals = np.zeros((times.size, space.n))
    live = times > delay
    if live.any():
        e = np.zeros(parent.n)
        e[source] = 1.0 / parent.mu[source]
        vals[live] = eng.evolve(times[live] - delay, e)[:, members]
    vals = np.maximum(vals, 0.0)
    return space, SpaceTimeFunction(space, times, vals, nonnegative=True,
                                    label=f"influx from {source}")


def combine_grids(*grids, rtol=1e-9):
    """Sorted union of time grids; points closer than rtol * max(1, |t|)
    to their predecessor are merged (the earlier one is kept)."""
    t = np.unique(np.concatenate([np.asarray(g, dtype=float).ravel() for g in grids]))
    if t.size < 2:
        return t
    keep = [0]
    for k in range(1, t.size):
        if t[k] - t[keep[-1]] > rtol * max(1.0, abs(t[k])):
            keep.append(k)
    return t[keep]


def heat_grid(T, t_min=1e-7, t_switch=1e-2, n_log=2000, step=1e-4, extra=()):
    """Geometric samples from t_min to t_switch, then uniform steps up to T.

    Early geometric refinement resolves solutions that switch on at t = 0
    (boundary influx, kernels); ``extra`` adds required times such as an
    eps grid.
    """
    if not 0 < t_min < t_switch < T:
        raise InvalidInput("need 0 < t_min < t_switch < T")
    uniform = np.arange(t_switch, T + 0.5 * step, step)
    uniform[-1] = min(uniform[-1], T)
    return combine_grids(np.geomspace(t_min, t_switch, n_log), uniform, np.asarray(extra, float))


# -- residuals ------------------------------------------------------------

def _three_point_weights(times):
    t = times
    h1 = t[1:-1] - t[:-2]
    h2 = t[2:] - t[1:-1]
    a = -h2 / (h1 * (h1 + h2))
    b = (h2 - h1) / (h1 * h2)
    c = h1 / (h2 * (h1 + h2))
    return a, b, c, h1, h2


def _where(u, where):
    if where is None:
        return u.domain.interior
    return np.unique(np.asarray(list(where), dtype=np.int64))


def residual_field(space, u: SpaceTimeFunction, where=None):
    """|central-difference dt u + L u| at interior times, for vertices in
    ``where`` (default: interior of u's domain). Shape (m-2, |where|)."""
    if u.m < 3:
        raise InsufficientData("need at least 3 time samples")
    if u.values.shape[1] != space.n:
        raise InvalidInput("function and space have different vertex counts")
    idx = _where(u, where)
    V = u.values
    a, b, c, _, _ = _three_point_weights(u.times)
    dt = a[:, None] * V[:-2] + b[:, None] * V[1:-1] + c[:, None] * V[2:]
    Lu = (space.stiffness() @ V[1:-1].T).T / space.mu[None, :]
    return np.abs(dt + Lu)[:, idx]


def solution_residual(space, u: SpaceTimeFunction, where=None):
    """Max over interior vertices and interior times of |dt u + L u|."""
    r = residual_field(space, u, where)
    return float(r.max()) if r.size else 0.0


def residual_tolerance(space, u: SpaceTimeFunction, where=None, safety=2.0):
    """Truncation bound (h1 h2 / 6) |u'''| of the three-point derivative,
    with |u'''| estimated from local third divided differences, plus a
    rounding floor. This is the tau every inequality check accumulates.

    The estimate is a-posteriori: an isolated spike in time inflates its
    own third differences and can pass. Smooth defects cannot.
    """
    if u.m < 3:
        raise InsufficientData("need at least 3 time samples")
    idx = _where(u, where)
    t = u.times
    V = u.values[:, idx] if idx.size else np.zeros((u.m, 1))
    scale = max(1.0, float(np.abs(u.values).max()))
    _, _, _, h1, h2 = _three_point_weights(t)
    if u.m >= 4:
        d1 = np.diff(V, axis=0) / np.diff(t)[:, None]
        d2 = np.diff(d1, axis=0) / (t[2:] - t[:-2])[:, None]
        d3 = np.diff(d2, axis=0) / (t[3:] - t[:-3])[:, None]
        c3 = 6.0 * np.abs(d3).max(axis=1)
        # interior point k sits between third differences k-1 and k
        local = np.maximum(np.r_[c3[:1], c3], np.r_[c3, c3[-1:]])
        trunc = float(np.max(h1 * h2 / 6.0 * local))
    else:
        trunc = 0.0
    Linf = float(np.max(np.abs(space.stiffness()).sum(axis=1).A.ravel() / space.mu))
    floor = 64 * EPS * scale * (1.0 / float(np.min(np.diff(t))) + Linf)
    return safety * trunc + floor


def check_solution(space, u, where=None):
    """(residual, tolerance, passed)."""
    r = solution_residual(space, u, where)
    tau = residual_tolerance(space, u, where)
    return r, tau, r <= tau


# -- verdicts -------------------------------------------------------------

@dataclass
class Verdict:
    status: str
    value: float = float("nan")
    tolerance: float = float("nan")
    location: tuple = None
    detail: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.status == "pass"

    def to_dict(self):
        d = {"status": self.status, "value": _num(self.value),
             "tolerance": _num(self.tolerance), "detail": self.detail}
        if self.location is not None:
            d["location"] = list(self.location)
        return d


def _num(v):
    v = float(v)
    return v if np.isfinite(v) else repr(v)


def _engine(obj):
    return obj if isinstance(obj, HeatEngine) else engine_for(obj)


# -- Harnack --------------------------------------------------------------

@dataclass(frozen=True)
class HarnackWindow:
    a: float
    b: float
    c: float
    d: float
    K: tuple

    def __post_init__(self):
        if not (self.a < self.b < self.c < self.d):
            raise InvalidWindow("need a < b < c < d")
        K = tuple(sorted(set(int(k) for k in self.K)))
        if not K:
            raise InvalidWindow("K must be nonempty")
        object.__setattr__(self, "K", K)


def harnack_ratio(u: SpaceTimeFunction, window: HarnackWindow, check_interior=True):
    """max_{[a,b] x K} u / min_{[c,d] x K} u over grid samples.

    Returns inf when the late minimum vanishes.
    """
    if not u.is_nonnegative():
        raise InvalidInput("Harnack ratio needs a nonnegative function")
    t = u.times
    slack = 1e-12 * max(1.0, abs(t[-1]))
    if window.a < t[0] - slack or window.d > t[-1] + slack:
        raise InvalidWindow("window extends outside the time grid")
    early = (t >= window.a - slack) & (t <= window.b + slack)
    late = (t >= window.c - slack) & (t <= window.d + slack)
    if not early.any() or not late.any():
        raise InvalidWindow("window contains no grid samples")
    K = np.asarray(window.K)
    if K.max() >= u.space.n:
        raise InvalidWindow("K out of range")
    if check_interior and np.setdiff1d(K, u.domain.interior).size:
        raise InvalidWindow("K must lie in the interior of the solution's domain")
    top = float(u.values[early][:, K].max())
    bot = float(u.values[late][:, K].min())
    if bot <= 0:
        return np.inf
    return top / bot


def harnack_constant(engine, window: HarnackWindow, sources=None, samples=41):
    """Empirical Harnack constant: max ratio over the family p(t, ., y).

    Returns (C, per_source) where per_source maps y to its ratio.
    """
    engine = _engine(engine)
    times = combine_grids(np.linspace(window.a, window.b, samples),
                          np.linspace(window.c, window.d, samples))
    sources = range(engine.n) if sources is None else sources
    ratios = {}
    for y in sources:
        u = kernel_solution(engine, times, y)
        ratios[int(y)] = harnack_ratio(u, window)
    return max(ratios.values()), ratios


# -- Caccioppoli ----------------------------------------------------------

def caccioppoli_constant(space, U: Subdomain, psi: CutoffFunction, T):
    """Constant C in  int_0^T E_1(psi u) dt <= C (sup u)^2  from the
    energy-measure chain: product bound, Leibniz, AM-GM and one
    integration by parts in time."""
    e_psi = space.form(psi.values)
    mu_U = U.mu_total
    return T * mu_U + 10.0 * T * e_psi + 20.0 * mu_U


def caccioppoli_check(space, U: Subdomain, V: Subdomain, psi: CutoffFunction,
                      u: SpaceTimeFunction):
    """Return (lhs, rhs_bound): trapezoid integral of E_1(psi u(t)) and
    C (max_U u)^2."""
    if np.setdiff1d(V.members, psi.one_set).size:
        raise InvalidCutoff("psi must equal 1 on V")
    if np.setdiff1d(psi.support, U.interior).size:
        raise InvalidCutoff("psi must be supported in the interior of U")
    if not u.is_nonnegative():
        raise InvalidInput("Caccioppoli check needs a nonnegative solution")
    pv = psi.values
    e1 = np.array([space.form1(pv * row) for row in u.values])
    lhs = float(trapezoid(e1, u.times)) if u.m > 1 else 0.0
    M = float(u.values[:, U.members].max())
    T = float(u.times[-1] - u.times[0])
    return lhs, caccioppoli_constant(space, U, psi, T) * M * M


# -- extension principle --------------------------------------------------

def extend_by_zero(u: SpaceTimeFunction, check_tol, region=None, mirror=4):
    """Extend u by zero to negative times.

    The hypothesis is that u(t) -> 0 in L^2 on the region as t decreases to
    the first sample; it is checked on the earliest sample. The returned
    function has ``mirror`` negative samples (mirror images of the first
    positive gaps) plus t = 0, and claims to solve on u's domain.
    """
    idx = u.domain.interior if region is None else np.asarray(list(region), dtype=np.int64)
    first = u.values[0, idx]
    norm = float(np.sqrt(np.sum(first * first * u.space.mu[idx])))
    if norm > check_tol:
        raise ExtensionRefused(f"L2 norm {norm:.3e} of the earliest sample exceeds "
                               f"{check_tol:.3e}", norm)
    t0 = u.times[0]
    if t0 <= 0:
        raise InvalidInput("extension needs a grid in positive time")
    pos = u.times[:mirror] - 0.0
    neg = -pos[::-1]
    times = np.r_[neg, 0.0, u.times]
    vals = np.vstack([np.zeros((neg.size + 1, u.space.n)), u.values])
    out = SpaceTimeFunction(u.space, times, vals, domain=u.domain,
                            nonnegative=u.nonnegative, label=u.label)
    out.extended_from = float(t0)
    return out


# -- maximum principle ----------------------------------------------------

def maximum_principle_check(space, U: Subdomain, u: SpaceTimeFunction):
    """Verify u <= tau on the grid times x U for a solution of the killed
    equation on U with u(t0) <= 0 and u+ supported in U.

    tau is the measured residual integrated over the time span plus a
    rounding floor: a residual r perturbs a killed solution by at most
    T * max|r| (Duhamel and sub-Markov contraction).
    """
    vals = u.values
    scale = max(1.0, float(np.abs(vals).max()))
    floor = 1e-12 * scale
    inside = U.mask
    if vals[0, inside].max() > floor:
        return Verdict("not-applicable", detail={"reason": "u(t0) is not <= 0 on U"})
    if (~inside).any() and vals[:, ~inside].max() > floor:
        return Verdict("not-applicable", detail={"reason": "u+ is not supported in U"})
    rs = restrict(space, U.members)
    uU = SpaceTimeFunction(rs, u.times, vals[:, U.members])
    every = np.arange(rs.n)
    r = solution_residual(rs, uU, where=every)
    tol_r = residual_tolerance(rs, uU, where=every)
    if r > tol_r:
        return Verdict("not-applicable", value=r, tolerance=tol_r,
                       detail={"reason": "u does not solve the killed equation on U"})
    tau = (tol_r + r) * float(u.times[-1] - u.times[0]) + floor
    sub = vals[:, U.members]
    k, j = np.unravel_index(int(np.argmax(sub)), sub.shape)
    peak = float(sub[k, j])
    if peak <= tau:
        return Verdict("pass", peak, tau, detail={"residual": r})
    return Verdict("fail", peak, tau, location=(float(u.times[k]), int(U.members[j])),
                   detail={"residual": r})


# -- minimality -----------------------------------------------------------

def minimality_check(engine, u: SpaceTimeFunction, f, t0=None,
                     exhaustion: Exhaustion = None):
    """Check P_{t - t0} f <= u for a nonnegative solution u on the whole
    space with f <= u(t0), directly and along an exhaustion (P^{U_i} f+
    stays below u, and converges to P f+ monotonically)."""
    engine = _engine(engine)
    space = engine.space
    f = np.asarray(f, dtype=float)
    t0 = float(u.times[0]) if t0 is None else float(t0)
    k0 = u.index_of(t0)
    scale = max(1.0, float(np.abs(u.values).max()), float(np.abs(f).max()))
    floor = 1e-12 * scale
    if not u.is_nonnegative():
        return Verdict("not-applicable", detail={"reason": "u is not nonnegative"})
    if np.any(f > u.values[k0] + floor):
        return Verdict("not-applicable", detail={"reason": "f exceeds u(t0)"})
    later = u.times[k0:]
    vals = u.values[k0:]
    if later.size >= 3:
        sub = SpaceTimeFunction(space, later, vals, domain=u.domain)
        r, tol_r, ok = check_solution(space, sub)
        if not ok:
            return Verdict("not-applicable", value=r, tolerance=tol_r,
                           detail={"reason": "u does not solve on the interior of X"})
        tau = (r + tol_r) * float(later[-1] - later[0]) + floor
    else:
        tau = floor
    Pf = engine.evolve(later - t0, f)
    diff = vals - Pf
    k, j = np.unravel_index(int(np.argmin(diff)), diff.shape)
    slack = float(diff[k, j])

    if exhaustion is None:
        exhaustion = ball_exhaustion(space, int(np.argmax(f)))
    fp = np.clip(f, 0.0, None)
    Pfp = engine.evolve(later - t0, fp)
    stage_slack, stage_gap = [], []
    for U in exhaustion:
        PU = engine.restricted_evolve(U, later - t0, fp)
        stage_slack.append(float((vals - PU).min()))
        stage_gap.append(float(np.abs(PU - Pfp).max()))
    monotone = all(b <= a + floor for a, b in zip(stage_gap, stage_gap[1:]))
    stages_ok = min(stage_slack) >= -tau and monotone and stage_gap[-1] <= floor
    detail = {"stage_slack": stage_slack, "stage_gap": stage_gap,
              "gap_monotone": monotone}
    status = "pass" if slack >= -tau and stages_ok else "fail"
    loc = None if status == "pass" else (float(later[k]), int(j))
    return Verdict(status, slack, tau, location=loc, detail=detail)


# -- local L1 bound -------------------------------------------------------

class MassBound(NamedTuple):
    sup_mass: float
    bound: float

    @property
    def holds(self):
        return self.sup_mass <= self.bound * (1 + 1e-12) + 1e-300


def l1_mass_bound(engine, u: SpaceTimeFunction, K, T_prime, T_double=None, probe=None,
                  samples=65):
    """sup_{t <= T'} sum_K u(t) mu against (1/c) min_A u(T''), where c is the
    minimum of p(s, x, y) over s in [T'' - T', T''], x in A, y in K.

    T'' defaults to the grid time strictly inside (T', T_end) nearest its midpoint;
    the probe set A defaults to the argmax vertex of u(T'').
    """
    engine = _engine(engine)
    K = np.unique(np.asarray(list(K), dtype=np.int64))
    t = u.times
    early = t <= T_prime * (1 + 1e-12)
    if not early.any():
        raise InsufficientData("no grid samples at or before T'")
    if T_double is None:
        cand = np.flatnonzero((t > T_prime) & (t < t[-1]))
        if cand.size == 0:
            raise InsufficientData("grid needs a sample strictly between T' and T")
        mid = 0.5 * (T_prime + t[-1])
        k2 = int(cand[np.argmin(np.abs(t[cand] - mid))])
    else:
        k2 = u.index_of(T_double)
        if not (T_prime < t[k2] < t[-1]):
            raise InsufficientData("need T' < T'' < T")
    T2 = float(t[k2])
    uT2 = u.values[k2]
    A = np.array([int(np.argmax(uT2))]) if probe is None else np.asarray(list(probe))
    mass = (u.values[early][:, K] * u.space.mu[K]).sum(axis=1)
    s_vals = combine_grids(np.linspace(T2 - T_prime, T2, samples), T2 - t[early])
    s_vals = s_vals[s_vals > 0]
    c = min(float(engine.kernel_matrix(s)[np.ix_(A, K)].min()) for s in s_vals)
    bound = float(uT2[A].min()) / c if c > 0 else np.inf
    return MassBound(float(mass.max()), bound)


# -- storage --------------------------------------------------------------

def save_solution(u: SpaceTimeFunction, path):
    """CSV rows (t, vertex, value) plus a JSON sidecar ``<path>.json``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "vertex", "value"])
        for k, t in enumerate(u.times):
            for x in range(u.space.n):
                w.writerow([repr(float(t)), x, repr(float(u.values[k, x]))])
    side = {"space_hash": u.space.content_hash(),
            "domain": [int(v) for v in u.domain.members],
            "nonnegative": bool(u.nonnegative), "label": u.label}
    with open(str(path) + ".json", "w") as fh:
        json.dump(side, fh, indent=1, sort_keys=True)


def load_solution(space, path):
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows[(float(row["t"]), int(row["vertex"]))] = float(row["value"])
    times = np.array(sorted({t for t, _ in rows}))
    vals = np.zeros((times.size, space.n))
    pos = {t: k for k, t in enumerate(times)}
    for (t, x), v in rows.items():
        if not 0 <= x < space.n:
            raise InvalidInput(f"vertex {x} out of range")
        vals[pos[t], x] = v
    domain, nonneg, label = None, False, None
    try:
        with open(str(path) + ".json") as fh:
            side = json.load(fh)
    except FileNotFoundError:
        side = None
    if side is not None:
        if side.get("space_hash") not in (None, space.content_hash()):
            raise InvalidInput("solution was stored for a different space")
        domain = Subdomain(space, side["domain"])
        nonneg = bool(side.get("nonnegative", False))
        label = side.get("label")
    return SpaceTimeFunction(space, times, vals, domain=domain, nonnegative=nonneg, label=label)
