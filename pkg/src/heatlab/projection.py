"""Quotients of a Dirichlet space by a free finite group of automorphisms,
and the folding identity p2(t, z, z') = sum_g p1(t, x, g y)."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidAction, InvalidInput
from .semigroup import AtomicMeasure, HeatEngine
from .solutions import SpaceTimeFunction
from .space import DirichletSpace, Subdomain, build_cycle, build_grid_2d, build_path

AUTOMORPHISM_RTOL = 1e-12


def _close(a, b):
    return np.allclose(a, b, rtol=AUTOMORPHISM_RTOL, atol=0.0)


class GroupAction:
    """A finite group of vertex permutations, enumerated from generators.

    ``g[x]`` is the image of vertex x. Every element must preserve mu,
    weights and killing, and the action must be free.
    """

    def __init__(self, space: DirichletSpace, generators):
        n = space.n
        gens = []
        for g in generators:
            g = np.asarray(g, dtype=np.int64).ravel()
            if g.size != n or not np.array_equal(np.sort(g), np.arange(n)):
                raise InvalidAction("generator is not a permutation of the vertices")
            gens.append(g)
        self.space = space
        self.generators = gens
        self.elements = self._enumerate(n, gens)
        for g in self.elements:
            self._check_automorphism(g)
        identity = np.arange(n)
        for g in self.elements:
            if not np.array_equal(g, identity) and np.any(g == identity):
                x = int(np.flatnonzero(g == identity)[0])
                raise InvalidAction(f"action is not free: a nontrivial element fixes vertex {x}")

    @staticmethod
    def _enumerate(n, gens):
        identity = np.arange(n)
        seen = {identity.tobytes(): identity}
        frontier = [identity]
        while frontier:
            nxt = []
            for h in frontier:
                for g in gens:
                    c = g[h]
                    key = c.tobytes()
                    if key not in seen:
                        seen[key] = c
                        nxt.append(c)
                        if len(seen) > n:
                            raise InvalidAction("group is larger than the vertex set; "
                                                "the action cannot be free")
            frontier = nxt
        return [seen[k] for k in sorted(seen)]

    def _check_automorphism(self, g):
        sp = self.space
        if not _close(sp.mu[g], sp.mu):
            raise InvalidAction("group element does not preserve mu")
        if not _close(sp.killing[g], sp.killing):
            raise InvalidAction("group element does not preserve killing")
        W = sp.weights
        Wg = W[g][:, g]
        diff = abs(Wg - W)
        if diff.nnz and diff.max() > AUTOMORPHISM_RTOL * max(1.0, abs(W).max()):
            raise InvalidAction("group element does not preserve weights")

    @property
    def order(self):
        return len(self.elements)

    def orbit(self, x):
        return np.unique([g[x] for g in self.elements])

    @classmethod
    def trivial(cls, space):
        return cls(space, [np.arange(space.n)])

    @classmethod
    def shift(cls, space, k):
        """x -> x + k mod n (for cycles)."""
        return cls(space, [(np.arange(space.n) + k) % space.n])

    @classmethod
    def reflection(cls, space):
        """x -> n - 1 - x (for paths)."""
        return cls(space, [np.arange(space.n)[::-1].copy()])


def load_action(space, path):
    """Action file: ``{"generators": [[...], ...]}`` or a bare list."""
    with open(path) as fh:
        data = json.load(fh)
    gens = data["generators"] if isinstance(data, dict) else data
    return GroupAction(space, gens)


@dataclass
class QuotientMap:
    pi: np.ndarray
    fibers: list
    space1: DirichletSpace
    space2: DirichletSpace
    action: GroupAction

    def lift(self, f):
        """f o pi for a function (or rows of functions) on X2."""
        f = np.asarray(f, dtype=float)
        return f[..., self.pi]

    def fiber_sum(self, f):
        """z -> sum over the fiber of z, i.e. integration against the
        counting disintegration."""
        f = np.asarray(f, dtype=float)
        return np.array([f[..., fib].sum(axis=-1) for fib in self.fibers]).T \
            if f.ndim > 1 else np.array([f[fib].sum() for fib in self.fibers])

    def lift_measure(self, nu2: AtomicMeasure):
        """Spread each atom of nu2 over its fiber: P1 of the lift folds to
        P2 nu2."""
        return AtomicMeasure(nu2.mass[self.pi])

    def push_measure(self, nu1: AtomicMeasure):
        return AtomicMeasure(self.fiber_sum(nu1.mass))

    def disintegration_gap(self, f):
        """|sum f mu1 - sum_z (sum_fiber f) mu2(z)|."""
        f = np.asarray(f, dtype=float)
        lhs = float(np.dot(f, self.space1.mu))
        rhs = float(np.dot(self.fiber_sum(f), self.space2.mu))
        return abs(lhs - rhs)

    def to_dict(self):
        i, j, w = self.space2.edges
        return {
            "group_order": self.action.order,
            "orbits": [[int(v) for v in fib] for fib in self.fibers],
            "mu2": [float(v) for v in self.space2.mu],
            "weights": [[int(a), int(b), float(c)] for a, b, c in zip(i, j, w)],
            "killing2": [float(v) for v in self.space2.killing],
        }


def build_quotient(space1: DirichletSpace, action: GroupAction):
    """Orbit space with mu2(z) = mu1(x), killing2(z) = killing1(x) and
    w2(z, z') = (sum of w1 over edges between the orbits) / |G|.

    Edges inside a single orbit carry no energy for functions of the form
    f o pi and are dropped.
    """
    if action.space is not space1:
        raise InvalidAction("action is defined on a different space")
    n = space1.n
    pi = -np.ones(n, dtype=np.int64)
    fibers = []
    for x in range(n):
        if pi[x] < 0:
            orb = action.orbit(x)
            pi[orb] = len(fibers)
            fibers.append(orb)
    reps = np.array([fib[0] for fib in fibers])
    order = action.order
    acc = {}
    i, j, w = space1.edges
    for a, b, c in zip(pi[i], pi[j], w):
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        acc[key] = acc.get(key, 0.0) + c
    edges = [(a, b, c / order) for (a, b), c in sorted(acc.items())]
    name = f"{space1.name or 'space'}/G{order}"
    space2 = DirichletSpace.from_edges(len(fibers), edges, space1.mu[reps],
                                       killing=space1.killing[reps], name=name)
    return space2, QuotientMap(pi, fibers, space1, space2, action)


def generator_gap(qmap: QuotientMap, f):
    """max |L2 f o pi - L1 (f o pi)|."""
    lhs = qmap.lift(qmap.space2.apply_generator(f))
    rhs = qmap.space1.apply_generator(qmap.lift(f))
    return float(np.abs(lhs - rhs).max())


def verify_kernel_projection(engine1: HeatEngine, engine2: HeatEngine, qmap: QuotientMap,
                             t, sample_pairs=None, tol=1e-10):
    """max over pairs (z, z') of |p2(t, z, z') - sum_g p1(t, x, g y)| with
    x, y any lifts; raises InvalidInput when the engines do not match the
    map and AssertionError when the gap exceeds ``tol``."""
    if engine1.space is not qmap.space1 or engine2.space is not qmap.space2:
        raise InvalidInput("engines do not match the quotient map")
    P1 = engine1.kernel_matrix(t)
    P2 = engine2.kernel_matrix(t)
    m = qmap.space2.n
    if sample_pairs is None:
        sample_pairs = [(a, b) for a in range(m) for b in range(m)]
    gap = 0.0
    for z, zp in sample_pairs:
        x = qmap.fibers[z][0]
        folded = P1[x, qmap.fibers[zp]].sum()
        gap = max(gap, abs(P2[z, zp] - folded))
    scale = max(1.0, float(np.abs(P2).max()))
    if gap > tol * scale:
        raise AssertionError(f"kernel projection gap {gap:.3e} exceeds {tol:.1e}")
    return gap


def lift_solution(qmap: QuotientMap, u2: SpaceTimeFunction):
    """v = u2 o pi on X1, solving wherever u2 solves."""
    if u2.space is not qmap.space2:
        raise InvalidInput("solution lives on a different space")
    dom = np.flatnonzero(np.isin(qmap.pi, u2.domain.members))
    return SpaceTimeFunction(qmap.space1, u2.times, qmap.lift(u2.values),
                             domain=Subdomain(qmap.space1, dom),
                             nonnegative=u2.nonnegative, label=u2.label)


def distance_compatibility(qmap: QuotientMap, metric1, metric2, tol=1e-6):
    """Empirical check of d2(pi x, pi y) = min_g d1(x, g y).

    ``metric1`` and ``metric2`` are distance matrices (for instance upper
    brackets of the intrinsic metric). Returns the largest discrepancy.
    """
    m = qmap.space2.n
    worst = 0.0
    for z in range(m):
        x = qmap.fibers[z][0]
        for zp in range(m):
            folded = float(np.min(metric1[x, qmap.fibers[zp]]))
            worst = max(worst, abs(folded - metric2[z, zp]))
    return {"max_gap": worst, "tolerance": tol, "holds": worst <= tol}


def builtin_quotients():
    """Named (space, action) pairs used by the scenario catalog and tests."""
    out = []
    c6 = build_cycle(6)
    out.append(("cycle6/shift3", c6, GroupAction.shift(c6, 3)))
    out.append(("cycle6/shift2", c6, GroupAction.shift(c6, 2)))
    c12 = build_cycle(12, weight=0.5, mu=2.0)
    out.append(("cycle12/shift3", c12, GroupAction.shift(c12, 3)))
    p4 = build_path(4)
    out.append(("path4/reflection", p4, GroupAction.reflection(p4)))
    p10 = build_path(10, spacing=0.5, boundary=("absorbing", "absorbing"))
    out.append(("path10-absorbing/reflection", p10, GroupAction.reflection(p10)))
    c200 = build_cycle(200)
    out.append(("cycle200/shift40", c200, GroupAction.shift(c200, 40)))
    return out


def radial_profile(engine: HeatEngine, t, center, coords):
    """Demo: kernel from ``center`` averaged over shells of equal distance
    (rounded to 1e-9). Radial averaging is not a free quotient; rows are
    (r, mean, spread) and the spread measures anisotropy."""
    p = engine.kernel_matrix(t)[center]
    r = np.round(np.linalg.norm(coords - coords[center], axis=1), 9)
    rows = []
    for radius in np.unique(r):
        vals = p[r == radius]
        rows.append((float(radius), float(vals.mean()), float(vals.max() - vals.min())))
    return rows


def radial_demo(n=21, spacing=0.25, t=0.5):
    """Odd square grid, kernel from the centre vertex."""
    space = build_grid_2d(n, n, spacing=spacing, diffusivity=0.5)
    eng = HeatEngine(space)
    c = (n // 2) * n + n // 2
    ij = np.array([(a, b) for a in range(n) for b in range(n)], dtype=float) * spacing
    return radial_profile(eng, t, c, ij)
