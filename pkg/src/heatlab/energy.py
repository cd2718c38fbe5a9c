"""Energy measures, cutoff functions, intrinsic distance and functional
inequality checkers.

The energy density of f at a vertex is

    Gamma(f)(x) = 1/2 sum_y w_xy (f(x) - f(y))^2,

half of every edge term sits at each endpoint, so sum_x Gamma(f)(x) is the
form without its killing part. Killing never enters Gamma.
"""

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import InvalidBall, InvalidCutoff, InvalidInput
from .space import DirichletSpace, Subdomain, graph_metric

# -- energy measure -------------------------------------------------------


@dataclass(frozen=True)
class EnergyMeasure:
    density: np.ndarray

    @property
    def total(self):
        return float(self.density.sum())

    def integrate(self, phi):
        return float(np.dot(self.density, phi))


def edge_density(space, f, g=None, edge_factor=None):
    """Vertex density 1/2 sum_y w_xy a_xy (f(x)-f(y)) (g(x)-g(y)).

    ``edge_factor`` is an optional per-edge multiplier a_xy (aligned with
    ``space.edges``); it is how edge-averaged functions enter the discrete
    Leibniz and product rules.
    """
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    i, j, w = space.edges
    term = 0.5 * w * (f[i] - f[j]) * (g[i] - g[j])
    if edge_factor is not None:
        term = term * edge_factor
    out = np.zeros(space.n)
    np.add.at(out, i, term)
    np.add.at(out, j, term)
    return out


def edge_mean(space, f):
    """Edgewise average (f(x) + f(y)) / 2 aligned with ``space.edges``."""
    f = np.asarray(f, dtype=float)
    i, j, _ = space.edges
    return 0.5 * (f[i] + f[j])


def energy_measure(space, f, g=None):
    """Gamma(f), or the signed Gamma(f, g) when ``g`` is given."""
    return EnergyMeasure(edge_density(space, f, g))


def gamma_form(space, f, g=None):
    """The killing-free part of the form, sum_x Gamma(f, g)(x)."""
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    i, j, w = space.edges
    return float(np.sum(w * (f[i] - f[j]) * (g[i] - g[j])))


def energy_functional(space, f, phi):
    """2 E(phi f, f) - E(f^2, phi) on the killing-free form.

    With the half-edge density this equals 2 sum_x phi(x) Gamma(f)(x): the
    density is normalized so that sum_x Gamma(f)(x) = E(f, f), while the
    functional at phi = 1 gives 2 E(f, f).
    """
    f = np.asarray(f, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return 2 * gamma_form(space, phi * f, f) - gamma_form(space, f * f, phi)


@dataclass
class IdentityReport:
    leibniz_naive: float
    leibniz_symmetrized: float
    cauchy_schwarz_slack: float
    amgm_slack: float
    product_bound_slack: float
    passed: bool
    tolerance: float = 1e-12

    def to_dict(self):
        return asdict(self)


def check_energy_identities(space, f, g, h, k, tol=1e-12):
    """Residuals of the Leibniz rule and slacks of the Cauchy-Schwarz,
    AM-GM and product inequalities for one quadruple of functions.

    Slacks are relative to the larger side, so -tol is the pass threshold
    regardless of scale. Only the symmetrized Leibniz residual is asserted;
    the naive one is a discretization diagnostic.
    """
    f, g, h, k = (np.asarray(a, dtype=float) for a in (f, g, h, k))
    fbar, gbar = edge_mean(space, f), edge_mean(space, g)

    lhs = edge_density(space, f * g, h)
    naive = f * edge_density(space, g, h) + g * edge_density(space, f, h)
    sym = (edge_density(space, g, h, edge_factor=fbar)
           + edge_density(space, f, h, edge_factor=gbar))
    scale = max(1.0, np.max(np.abs(lhs)))
    leib_naive = float(np.max(np.abs(lhs - naive)) / scale)
    leib_sym = float(np.max(np.abs(lhs - sym)) / scale)

    gam_h = edge_density(space, h)
    gam_k = edge_density(space, k)
    gam_hk = edge_density(space, h, k)
    a = float(np.sum(f * f * gam_h))
    b = float(np.sum(g * g * gam_k))
    cross = float(np.sum(np.abs(f * g) * np.abs(gam_hk)))
    cs = (a * b - cross ** 2) / max(1.0, a * b)
    amgm_abs = float(np.sum(np.abs(f * g) * np.abs(gam_hk)) - abs(np.sum(f * g * gam_hk)))
    amgm = min(0.5 * (a + b) - cross, amgm_abs) / max(1.0, 0.5 * (a + b))

    gam_fg = edge_density(space, f * g)
    bound = 2 * (edge_density(space, g, edge_factor=fbar ** 2)
                 + edge_density(space, f, edge_factor=gbar ** 2))
    prod = float(np.min(bound - gam_fg)) / max(1.0, float(np.max(bound)))

    passed = leib_sym <= 10 * tol and min(cs, amgm, prod) >= -tol
    return IdentityReport(leib_naive, leib_sym, cs, amgm, prod, passed, tol)


# -- cutoff functions -----------------------------------------------------


@dataclass(frozen=True)
class CutoffFunction:
    """psi in [0, 1], equal to 1 on ``one_set`` and vanishing off ``support``."""

    values: np.ndarray
    one_set: np.ndarray
    support: np.ndarray = field(default=None)
    inside: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        K = np.unique(np.asarray(self.one_set, dtype=np.int64))
        if np.any(v < -1e-15) or np.any(v > 1 + 1e-15):
            raise InvalidCutoff("cutoff values must lie in [0, 1]")
        v = np.clip(v, 0.0, 1.0)
        if K.size and np.any(v[K] != 1.0):
            raise InvalidCutoff("cutoff must equal 1 on its one-set")
        supp = np.flatnonzero(v > 0)
        if self.support is not None:
            declared = np.unique(np.asarray(self.support, dtype=np.int64))
            if np.setdiff1d(supp, declared).size:
                raise InvalidCutoff("cutoff is nonzero outside its declared support")
            supp = declared
        if self.inside is not None:
            U = np.unique(np.asarray(self.inside, dtype=np.int64))
            if np.setdiff1d(supp, U).size:
                raise InvalidCutoff("cutoff support is not inside U")
        for a in (v, K, supp):
            a.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "one_set", K)
        object.__setattr__(self, "support", supp)


def cutoff_for(space, K, U: Subdomain):
    """Linear hop-distance ramp that is 1 on K and supported in interior(U).

    The ramp length is the hop distance from K to the first vertex that is
    not interior to U, so the support never reaches the edge of U.
    """
    K = np.unique(np.asarray(list(K), dtype=np.int64))
    interior = np.zeros(space.n, dtype=bool)
    interior[U.interior] = True
    if K.size == 0 or not np.all(interior[K]):
        raise InvalidCutoff("K must be nonempty and interior to U")
    dist = csgraph.shortest_path(space.weights, directed=False, unweighted=True,
                                 indices=K).min(axis=0)
    outside = ~interior
    r = float(dist[outside].min()) if outside.any() else float(dist.max()) + 1.0
    psi = np.clip(1.0 - dist / r, 0.0, 1.0)
    return CutoffFunction(psi, K, inside=U.members)


def ramp_cutoff(metric, x0, R):
    """psi = 1 on the ball of radius R/2 about x0, zero off B(x0, R), linear
    in distance between."""
    d = np.asarray(metric)[x0]
    psi = np.clip(2.0 - 2.0 * d / R, 0.0, 1.0)
    return CutoffFunction(psi, np.flatnonzero(d <= R / 2))


def cutoff_constant(space, psi: CutoffFunction):
    """Operator norm C_psi of f -> psi f in the E_1 norm."""
    A = space.stiffness().toarray() + np.diag(space.mu)
    D = psi.values
    return float(sla.eigh(D[:, None] * A * D[None, :], A, eigvals_only=True)[-1])


# -- intrinsic distance ---------------------------------------------------


def length_metric(space):
    """All-pairs shortest path with edge length sqrt(2 min(mu_u, mu_v) / w_uv).

    Any f with Gamma(f) <= mu satisfies |f(u) - f(v)| <= that length on every
    edge, so this is an upper bound for the intrinsic distance.
    """
    i, j, w = space.edges
    mu = space.mu
    ell = np.sqrt(2.0 * np.minimum(mu[i], mu[j]) / w)
    G = sp.coo_matrix((ell, (i, j)), shape=(space.n, space.n)).tocsr()
    return csgraph.shortest_path(G, directed=False)


def _grounded_laplacian(space, cond, ground):
    i, j, _ = space.edges
    n = space.n
    L = np.zeros((n, n))
    np.add.at(L, (i, j), -cond)
    np.add.at(L, (j, i), -cond)
    np.add.at(L, (i, i), cond)
    np.add.at(L, (j, j), cond)
    keep = np.arange(n) != ground
    return L[np.ix_(keep, keep)], keep


def dual_bound(space, x, y, lam):
    """Weak-duality upper bound sum lam mu + R_c(x, y) / 2 with conductances
    c_uv = w_uv (lam_u + lam_v); valid for any lam >= 0."""
    i, j, w = space.edges
    cond = w * (lam[i] + lam[j])
    Lg, keep = _grounded_laplacian(space, cond, x)
    rhs = np.zeros(space.n)[keep]
    yy = int(np.flatnonzero(keep).searchsorted(y))
    rhs[yy] = 1.0
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            sol = sla.solve(Lg, rhs, assume_a="pos")
    except (sla.LinAlgError, ValueError):
        return np.inf
    if not np.all(np.isfinite(sol)):
        return np.inf
    return float(np.dot(lam, space.mu) + 0.5 * sol[yy])


def _rescale_feasible(space, f):
    ratio = np.max(edge_density(space, f) / space.mu)
    if ratio <= 0:
        return f
    return f / np.sqrt(ratio)


def intrinsic_distance(space, x, y, tol=1e-8, max_newton=200, return_info=False):
    """Certified bracket (lower, upper) for the intrinsic distance
    sup{ f(y) - f(x) : Gamma(f) <= mu }.

    The sup is a convex program. It is solved by a log-barrier Newton ascent
    from f = 0. ``lower`` is the objective of the final iterate rescaled so
    max Gamma(f)/mu = 1; ``upper`` is the smaller of the shortest-path bound
    and the Lagrangian dual bound at the barrier multipliers
    lam_v = 1 / (t * slack_v). Non-convergence still returns a valid
    bracket; the gap is then simply wider.
    """
    if x == y:
        return (0.0, 0.0, {}) if return_info else (0.0, 0.0)
    n = space.n
    mu = space.mu
    ei, ej, w = space.edges
    upper_path = float(length_metric(space)[x, y])

    keep = np.arange(n) != x
    f = np.zeros(n)
    t = n / max(upper_path, 1e-300)
    best_lower, best_upper, best_f = 0.0, upper_path, f.copy()
    newton_steps = 0

    def barrier(fv, tt):
        s = mu - edge_density(space, fv)
        if np.any(s <= 0):
            return np.inf
        return -tt * (fv[y] - fv[x]) - float(np.sum(np.log(s)))

    while True:
        for _ in range(50):
            newton_steps += 1
            d = f[ei] - f[ej]
            s = mu - edge_density(space, f)
            inv = 1.0 / s
            cond = w * (inv[ei] + inv[ej])
            Lc, _ = _grounded_laplacian(space, cond, x)
            G = np.zeros((n, n))
            np.add.at(G, (ei, ei), w * d)
            np.add.at(G, (ei, ej), -w * d)
            np.add.at(G, (ej, ej), -w * d)
            np.add.at(G, (ej, ei), w * d)
            Gr = G[:, keep]
            H = Lc + Gr.T @ (inv[:, None] ** 2 * Gr)
            grad = (-t * _unit(n, y) + (G.T @ inv))[keep]
            try:
                with warnings.catch_warnings():
                    # barrier Hessians are ill-conditioned near the optimum
                    warnings.simplefilter("ignore", sla.LinAlgWarning)
                    step = -sla.solve(H, grad, assume_a="pos")
            except (sla.LinAlgError, ValueError):
                break
            dec2 = float(-grad @ step)
            if dec2 / 2 < 1e-12:
                break
            full = np.zeros(n)
            full[keep] = step
            phi0 = barrier(f, t)
            alpha = 1.0
            while alpha > 1e-14:
                cand = f + alpha * full
                if barrier(cand, t) <= phi0 - 0.25 * alpha * dec2:
                    break
                alpha *= 0.5
            else:
                break
            f = cand
            if newton_steps >= max_newton:
                break
        s = mu - edge_density(space, f)
        lam = 1.0 / (t * s)
        upper = min(upper_path, dual_bound(space, x, y, lam))
        fr = _rescale_feasible(space, f)
        lower = float(fr[y] - fr[x])
        if lower > best_lower:
            best_lower, best_f = lower, fr
        best_upper = min(best_upper, upper)
        if best_upper - best_lower <= tol or newton_steps >= max_newton:
            break
        t *= 20.0

    lower = min(best_lower, best_upper)
    if return_info:
        return lower, best_upper, {"f": best_f, "newton_steps": newton_steps}
    return lower, best_upper


def _unit(n, k):
    e = np.zeros(n)
    e[k] = 1.0
    return e


def intrinsic_metric(space, tol=1e-8):
    """All-pairs brackets; returns (lower, upper) matrices."""
    n = space.n
    lo = np.zeros((n, n))
    hi = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            lo[a, b], hi[a, b] = intrinsic_distance(space, a, b, tol=tol)
            lo[b, a], hi[b, a] = lo[a, b], hi[a, b]
    return lo, hi


# -- functional inequalities ----------------------------------------------


def _induced_laplacian(space, members):
    W = space.weights[members][:, members].toarray()
    return np.diag(W.sum(axis=1)) - W


def _max_generalized(A, B, rel=1e-12):
    """max f^T A f / f^T B f over f with f^T B f > 0 (A, B psd); inf if A
    charges the null space of B."""
    wB, VB = sla.eigh(B)
    scale = max(abs(wB).max(), 1e-300)
    rng = wB > rel * scale
    null = VB[:, ~rng]
    if null.size and np.max(np.abs(null.T @ A @ null)) > rel * max(1.0, np.abs(A).max()):
        return np.inf
    R = VB[:, rng] / np.sqrt(wB[rng])
    if R.shape[1] == 0:
        return 0.0
    return float(max(0.0, sla.eigh(R.T @ A @ R, eigvals_only=True)[-1]))


def check_doubling_poincare(space, metric=None, radii=(1.0,), centers=None):
    """Per (center, radius): doubling ratio V(x,2r)/V(x,r) and the smallest
    Poincare constant P with

        sum_{B(x,r)} |f - f_B|^2 mu <= P r^2 sum_{B(x,2r)} Gamma(f)

    over all f (a generalized eigenvalue). Balls are open, d < r.
    """
    d = length_metric(space) if metric is None else np.asarray(metric, dtype=float)
    if np.any(d < 0) or np.max(np.abs(d - d.T)) > 1e-12 * max(1.0, d.max()):
        raise InvalidInput("metric must be symmetric and nonnegative")
    centers = range(space.n) if centers is None else centers
    mu = space.mu
    records, notices = [], []
    for x in centers:
        for r in radii:
            B = np.flatnonzero(d[x] < r)
            B2 = np.flatnonzero(d[x] < 2 * r)
            if B.size == 0:
                notices.append(f"empty ball at x={x}, r={r}")
                continue
            V1, V2 = float(mu[B].sum()), float(mu[B2].sum())
            pos = np.searchsorted(B2, B)
            mB = np.zeros(B2.size)
            mB[pos] = mu[B]
            A = np.diag(mB) - np.outer(mB, mB) / V1
            P = _max_generalized(A, _induced_laplacian(space, B2)) / r ** 2
            records.append({"x": int(x), "r": float(r), "V_r": V1, "V_2r": V2,
                            "doubling": V2 / V1, "poincare": P})
    return {"records": records, "notices": notices,
            "max_doubling": max((r["doubling"] for r in records), default=np.nan),
            "max_poincare": max((r["poincare"] for r in records), default=np.nan)}


def check_cutoff_sobolev(space, psi: CutoffFunction, x0, R, s, beta, theta,
                         metric=None, centers=None):
    """Smallest c2 such that, for every ball B(x, s) and every f,

        sum_{B(x,s)} f^2 Gamma(psi) <= c2 (s/R)^{2 theta}
            (sum_{B(x,2s)} Gamma(f) + s^beta sum_{B(x,2s)} f^2 mu).

    Centers default to every vertex within distance R of x0. The supremum
    over f is exact (generalized eigenvalue), with f outside B(x, 2s) chosen
    to minimize the right side.
    """
    if not (0 < s <= R):
        raise InvalidBall("need 0 < s <= R")
    d = length_metric(space) if metric is None else np.asarray(metric, dtype=float)
    gpsi = edge_density(space, psi.values)
    if centers is None:
        centers = np.flatnonzero(d[x0] < R)
    worst = 0.0
    for x in centers:
        B = np.flatnonzero(d[x] < s)
        B2 = np.flatnonzero(d[x] < 2 * s)
        if B.size == 0 or B2.size == 0:
            raise InvalidBall(f"empty ball at x={x}, s={s}")
        a = np.zeros(B2.size)
        a[np.searchsorted(B2, B)] = gpsi[B]
        if not np.any(a > 0):
            continue
        Bmat = _induced_laplacian(space, B2) + s ** beta * np.diag(space.mu[B2])
        top = float(sla.eigh(np.diag(a), Bmat, eigvals_only=True)[-1])
        worst = max(worst, top / (s / R) ** (2 * theta))
    return worst


__all__ = [
    "EnergyMeasure", "CutoffFunction", "IdentityReport", "energy_measure",
    "edge_density", "edge_mean", "gamma_form", "energy_functional",
    "check_energy_identities", "cutoff_for", "ramp_cutoff", "cutoff_constant",
    "length_metric", "dual_bound", "intrinsic_distance", "intrinsic_metric",
    "check_doubling_poincare", "check_cutoff_sobolev", "graph_metric",
    "DirichletSpace",
]
