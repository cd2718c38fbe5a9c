"""Constructive Widder decomposition u = P_t nu + h of a nonnegative
solution.

For each epsilon on the grid, h_eps(t) = u(t) - P_{t-eps}[1_U u(eps)] is a
nonnegative solution on U vanishing before eps; the masses 1_U u(eps) mu
converge to nu as eps -> 0 and h = u - P_t nu. In a finite space the
limit is an ordinary limit, which we accelerate by polynomial
extrapolation in eps.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DecompositionFailed, InvalidInput, NotApplicable
from .semigroup import AtomicMeasure, HeatEngine
from .solutions import (SpaceTimeFunction, check_solution, extend_by_zero)
from .space import Exhaustion, Subdomain


@dataclass
class WidderDecomposition:
    nu: AtomicMeasure
    h: SpaceTimeFunction
    reconstruction_residual: float
    eps_trace: list
    h_nonnegativity_slack: float
    tolerance: float
    domain: Subdomain
    h_raw: np.ndarray = field(repr=False, default=None)
    diagnostics: dict = field(default_factory=dict)

    def h_at(self, t):
        """h(t) on the grid, zero for t <= 0."""
        if t <= 0:
            return np.zeros(self.h.space.n)
        return self.h.at(t)

    def nu_error_estimate(self):
        """Distance from nu to the smallest-epsilon mass, an a-posteriori
        bound on the extrapolation error."""
        if not self.eps_trace:
            return 0.0
        return float(self.eps_trace[-1][1])

    def extended_h(self, check_tol=1e-6, mirror=4):
        return extend_by_zero(self.h, check_tol, mirror=mirror)

    def to_dict(self):
        nz = np.flatnonzero(self.nu.mass)
        return {
            "nu": {"support": [int(v) for v in nz],
                   "mass": [float(self.nu.mass[v]) for v in nz],
                   "total": self.nu.total},
            "h_max": float(np.abs(self.h.values[:, self.domain.members]).max()),
            "reconstruction_residual": float(self.reconstruction_residual),
            "eps_trace": [[float(e), float(d)] for e, d in self.eps_trace],
            "h_nonnegativity_slack": float(self.h_nonnegativity_slack),
            "tolerance": float(self.tolerance),
            "domain": [int(v) for v in self.domain.members],
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def extrapolate_to_zero(eps, values):
    """Neville extrapolation of values(eps) to eps = 0 (rows of ``values``
    align with ``eps``)."""
    eps = np.asarray(eps, dtype=float)
    P = [np.array(v, dtype=float) for v in values]
    k = len(P)
    for level in range(1, k):
        for i in range(k - level):
            j = i + level
            P[i] = (eps[j] * P[i] - eps[i] * P[i + 1]) / (eps[j] - eps[i])
    return P[0]


def _trace_is_regular(eps, masses):
    """Consecutive mass differences shrink at least linearly with eps."""
    if len(masses) < 3:
        return len(masses) == 2
    d = [np.abs(masses[i] - masses[i + 1]).sum() for i in range(len(masses) - 1)]
    scale = max(1.0, float(np.abs(masses[-1]).sum()))
    if max(d) <= 1e-13 * scale:
        return True
    for i in range(len(d) - 1):
        if d[i + 1] > d[i] * (eps[i + 1] / eps[i]) ** 0.5 + 1e-13 * scale:
            return False
    return True


def _eps_indices(u, eps_grid):
    eps = np.asarray(eps_grid, dtype=float).ravel()
    if eps.size == 0:
        raise InvalidInput("eps_grid is empty")
    if np.any(eps <= 0):
        raise InvalidInput("eps values must be positive")
    eps = np.sort(eps)[::-1]
    try:
        idx = np.array([u.index_of(e) for e in eps])
    except InvalidInput as exc:
        raise InvalidInput(f"eps_grid must lie on the time grid: {exc}") from exc
    return u.times[idx], idx


def _check_engine(engine, u):
    if not isinstance(engine, HeatEngine) or engine.space is not u.space:
        raise InvalidInput("engine must be built on the solution's space")


def _solution_tolerance(u):
    """(residual, tau) for u on its domain interior, with tau accumulated
    over the time span as in the maximum principle."""
    r, tol_r, ok = check_solution(u.space, u)
    if not ok:
        raise NotApplicable(f"u does not solve on its domain (residual {r:.3e} > {tol_r:.3e})")
    scale = max(1.0, float(np.abs(u.values).max()))
    tau = (r + tol_r) * float(u.times[-1] - u.times[0]) + 1e-12 * scale
    return r, tau


def widder_local_decompose(engine: HeatEngine, u: SpaceTimeFunction, U: Subdomain,
                           eps_grid, extrapolate=True, max_points=4):
    """Decompose u = P_t nu + h with nu supported on U.

    ``engine`` is the global semigroup of u's space. nu is read off from the
    masses 1_U u(eps) mu, extrapolated to eps = 0 over the (at most
    ``max_points``) smallest eps when the eps-trace is regular.
    """
    _check_engine(engine, u)
    if U.parent is not u.space:
        raise InvalidInput("U belongs to a different space")
    eps, idx = _eps_indices(u, eps_grid)
    if np.setdiff1d(U.members, u.domain.members).size:
        raise NotApplicable("u is not defined as a solution on all of U")
    if not u.is_nonnegative():
        raise InvalidInput("Widder decomposition needs a nonnegative solution")
    residual, tau = _solution_tolerance(u)
    space = u.space
    mu = space.mu
    members = U.members
    times = u.times
    ind = U.mask.astype(float)

    masses, h_eps_min, h_eps = [], [], {}
    for e, k in zip(eps, idx):
        base = ind * u.values[k]
        later = times > e
        H = u.values[later] - engine.evolve(times[later] - e, base)
        low = float(H[:, members].min()) if H.size else 0.0
        if low < -10 * tau:
            raise DecompositionFailed(
                f"h_eps dips to {low:.3e} < -10 tau ({tau:.3e}) at eps={e:.3e}")
        masses.append(base * mu)
        h_eps_min.append(low)
        h_eps[float(e)] = (later, H)

    use = slice(max(0, len(eps) - max_points), len(eps))
    regular = _trace_is_regular(eps[use], masses[use])
    extrapolated = bool(extrapolate and len(eps) >= 2 and regular)
    if extrapolated:
        e_use, m_use = eps[use], masses[use]
        raw_nu = extrapolate_to_zero(e_use, m_use)
        # one order lower, for a per-vertex error estimate; atoms that do not
        # stand out from it are extrapolation noise on a vanishing trace
        lower = extrapolate_to_zero(e_use[1:], m_use[1:])
        raw_nu = np.where(raw_nu > 2.0 * np.abs(raw_nu - lower), raw_nu, 0.0)
    else:
        raw_nu = masses[-1].copy()
    nu_mass = np.where(U.mask, np.clip(raw_nu, 0.0, None), 0.0)
    nu = AtomicMeasure(nu_mass)
    trace = [(float(e), float(np.abs(m - nu_mass).sum())) for e, m in zip(eps, masses)]

    h_raw = u.values - engine.evolve_measure(times, nu)
    slack = float(h_raw[:, members].min())
    h_vals = h_raw.copy()
    h_vals[:, members] = np.maximum(h_raw[:, members], -tau)
    recon = float(np.abs(u.values - engine.evolve_measure(times, nu) - h_vals).max())
    h = SpaceTimeFunction(space, times, h_vals, domain=Subdomain(space, members),
                          nonnegative=False, label="h")

    # h_eps should increase to h as eps decreases (on common times, on U)
    mono = True
    keys = sorted(h_eps, reverse=True)
    for e_big, e_small in zip(keys, keys[1:]):
        lb, Hb = h_eps[e_big]
        ls, Hs = h_eps[e_small]
        rows = np.flatnonzero(lb[ls])
        diff = Hb[:, members] - Hs[rows][:, members]
        if diff.size and diff.max() > tau:
            mono = False
    diagnostics = {
        "residual": residual,
        "eps_extrapolated": extrapolated,
        "trace_regular": bool(regular),
        "h_eps_min": h_eps_min,
        "h_eps_monotone": mono,
        "hypotheses_exact": bool(np.setdiff1d(members, u.domain.interior).size == 0),
    }
    return WidderDecomposition(nu, h, recon, trace, slack, tau, U, h_raw=h_raw,
                               diagnostics=diagnostics)


def widder_global_decompose(engine: HeatEngine, u: SpaceTimeFunction, exhaustion: Exhaustion,
                            eps_grid, extrapolate=True):
    """Stagewise local decompositions along an exhaustion; nu is the final
    stage measure and h = u - P_t nu."""
    _check_engine(engine, u)
    if exhaustion.space is not u.space:
        raise InvalidInput("exhaustion belongs to a different space")
    if u.domain.size != u.space.n:
        raise NotApplicable("global decomposition needs a solution on the whole space")
    stages = [widder_local_decompose(engine, u, U, eps_grid, extrapolate=extrapolate)
              for U in exhaustion]
    final = stages[-1]
    total = max(final.nu.total, 1e-300)
    consistency = []
    for a, b in zip(stages, stages[1:]):
        m = a.domain.members
        gap = float(np.abs(b.nu.mass[m] - a.nu.mass[m]).sum())
        consistency.append(gap)
        if gap > 1e-8 * total + 1e-300:
            raise DecompositionFailed(f"stage measures disagree on U_n by {gap:.3e}")
    tau = final.tolerance
    monotone = True
    for a, b in zip(stages, stages[1:]):
        m = a.domain.members
        if np.any(b.h_raw[:, m] > a.h_raw[:, m] + tau):
            monotone = False
    final.diagnostics.update({
        "stages": len(stages),
        "stage_consistency": consistency,
        "h_monotone_in_stages": monotone,
        "stage_nu_totals": [s.nu.total for s in stages],
    })
    return final


def perturbed_decomposition(engine, dec: WidderDecomposition, y, amount):
    """A counterfeit decomposition: nu + amount * delta_y with h compensated
    so that P_t nu' + h' still reconstructs u exactly."""
    n = engine.n
    extra = AtomicMeasure.delta(n, y, amount)
    times = dec.h.times
    shift = engine.evolve_measure(times, extra)
    h_vals = dec.h.values - shift
    h = SpaceTimeFunction(dec.h.space, times, h_vals, domain=dec.h.domain, label="h'")
    return WidderDecomposition(dec.nu + extra, h, dec.reconstruction_residual,
                               list(dec.eps_trace), float(h_vals[:, dec.domain.members].min()),
                               dec.tolerance, dec.domain, h_raw=h_vals,
                               diagnostics={"counterfeit": True})


def _weak_limit(u, f, points=4):
    t = u.times[:points]
    s = (u.values[:points] * u.space.mu) @ f
    if t.size == 1:
        return float(s[0])
    return float(extrapolate_to_zero(t[::-1], s[::-1]))


def verify_uniqueness(engine, u: SpaceTimeFunction, dec1: WidderDecomposition,
                      dec2: WidderDecomposition, test_functions=(), points=4):
    """Compare two decompositions of u.

    Reports the total-variation gap between the measures, the weak-limit gap
    lim_{t->0} sum u(t) f mu - nu_i(f) for every test function, and which
    invariant of each decomposition (reconstruction, h >= 0) breaks.
    """
    _check_engine(engine, u)
    nu_gap = float(np.abs(dec1.nu.mass - dec2.nu.mass).sum())
    combined = dec1.nu_error_estimate() + dec2.nu_error_estimate() + 1e-12
    weak = []
    flagged_weak = set()
    for k, f in enumerate(test_functions):
        f = np.asarray(f, dtype=float)
        lim = _weak_limit(u, f, points)
        g1 = abs(lim - dec1.nu.integrate(f))
        g2 = abs(lim - dec2.nu.integrate(f))
        tol = 1e-6 * max(1.0, float(np.abs(f).max()) * max(dec1.nu.total, 1.0)) + \
            float(np.abs(f).max()) * combined
        weak.append({"f": k, "limit": lim, "gap1": g1, "gap2": g2, "tolerance": tol})
        if g1 > tol:
            flagged_weak.add(1)
        if g2 > tol:
            flagged_weak.add(2)

    broken = {1: [], 2: []}
    for key, dec in ((1, dec1), (2, dec2)):
        m = dec.domain.members
        rec = np.abs(u.values - engine.evolve_measure(u.times, dec.nu) - dec.h.values)
        if float(rec[:, m].max()) > max(dec.reconstruction_residual, 0.0) + dec.tolerance:
            broken[key].append("reconstruction")
        hmin = float(dec.h.values[:, m].min())
        if hmin < -dec.tolerance:
            k, j = np.unravel_index(int(np.argmin(dec.h.values[:, m])), dec.h.values[:, m].shape)
            broken[key].append(f"h>=0 (min {hmin:.3e} at t={u.times[k]:.3g}, x={int(m[j])})")
        if key in flagged_weak:
            broken[key].append("weak-limit")
    flagged = nu_gap > combined or bool(broken[1]) or bool(broken[2])
    return {
        "nu_gap": nu_gap,
        "combined_tolerance": combined,
        "weak_limit": weak,
        "broken_invariants": {"dec1": broken[1], "dec2": broken[2]},
        "flagged": bool(flagged),
    }
