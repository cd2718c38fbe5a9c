"""Finite symmetric Dirichlet spaces: weighted graphs with a vertex measure
and an optional killing (absorption) term.

The quadratic form is

    E(f, g) = sum_{x<y} w_xy (f(x) - f(y)) (g(x) - g(y)) + sum_x k(x) f(x) g(x)

and the generator is the positive operator L with E(f, g) = <f, L g>_mu,
i.e. (Lf)(x) = (1/mu(x)) [sum_y w_xy (f(x) - f(y)) + k(x) f(x)].
Vertices are indexed 0..n-1.
"""

import hashlib
import json
from collections.abc import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import InvalidExhaustion, InvalidGeometry, InvalidInput

BOUNDARY_KINDS = ("reflecting", "absorbing")


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class DirichletSpace:
    """A finite, connected, weighted graph carrying a Dirichlet form.

    Parameters
    ----------
    mu : array_like (n,)
        Strictly positive vertex measure.
    weights : array_like or sparse (n, n)
        Symmetric nonnegative conductances with zero diagonal.
    killing : array_like (n,), optional
        Nonnegative absorption rates; zero for a free space.
    coords : array_like (n, d), optional
        Embedding used only for reporting (plots, radial profiles).
    """

    def __init__(self, mu, weights, killing=None, coords=None, name=None):
        mu = np.asarray(mu, dtype=float).ravel()
        n = mu.size
        if n < 1:
            raise InvalidGeometry("a Dirichlet space needs at least one vertex")
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise InvalidGeometry("mu must be finite and strictly positive")

        W = sp.csr_matrix(weights, dtype=float)
        if W.shape != (n, n):
            raise InvalidGeometry(f"weights must be {n}x{n}, got {W.shape}")
        W.eliminate_zeros()
        if W.nnz and (np.any(W.data < 0) or not np.all(np.isfinite(W.data))):
            raise InvalidGeometry("weights must be finite and nonnegative")
        if np.any(W.diagonal() != 0):
            raise InvalidGeometry("weights must have zero diagonal")
        asym = abs(W - W.T)
        if asym.nnz and asym.max() > 1e-14 * max(1.0, abs(W).max()):
            raise InvalidGeometry("weights must be symmetric")
        W = ((W + W.T) * 0.5).tocsr()
        W.sort_indices()

        if killing is None:
            killing = np.zeros(n)
        killing = np.asarray(killing, dtype=float).ravel()
        if killing.size != n:
            raise InvalidGeometry("killing must have one entry per vertex")
        if not np.all(np.isfinite(killing)) or np.any(killing < 0):
            raise InvalidGeometry("killing must be finite and nonnegative")

        ncomp, _ = csgraph.connected_components(W, directed=False)
        if ncomp != 1:
            raise InvalidGeometry(f"space is disconnected ({ncomp} components)")

        self._W = W
        self._mu = _readonly(mu)
        self._killing = _readonly(killing)
        self.coords = None if coords is None else _readonly(coords)
        self.name = name

        upper = sp.triu(W, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        self._edge_i = upper.row[order].astype(np.int64)
        self._edge_j = upper.col[order].astype(np.int64)
        self._edge_w = _readonly(upper.data[order])
        self._edge_i.setflags(write=False)
        self._edge_j.setflags(write=False)

    # -- basic data -------------------------------------------------------

    @property
    def n(self):
        return self._mu.size

    @property
    def mu(self):
        return self._mu

    @property
    def killing(self):
        return self._killing

    @property
    def weights(self):
        return self._W

    @property
    def edges(self):
        """Arrays ``(i, j, w)`` listing each edge once with ``i < j``."""
        return self._edge_i, self._edge_j, self._edge_w

    @property
    def total_mass(self):
        return float(self._mu.sum())

    @property
    def is_conservative(self):
        return not np.any(self._killing > 0)

    def neighbors(self, x):
        W = self._W
        return W.indices[W.indptr[x]:W.indptr[x + 1]].copy()

    def weight(self, x, y):
        return float(self._W[x, y])

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return (f"<DirichletSpace{tag} n={self.n} edges={self._edge_w.size} "
                f"killed={int(np.count_nonzero(self._killing))}>")

    # -- operators --------------------------------------------------------

    def stiffness(self):
        """Sparse matrix K with E(f, g) = f^T K g."""
        deg = np.asarray(self._W.sum(axis=1)).ravel()
        return (sp.diags(deg + self._killing) - self._W).tocsr()

    def generator(self, dense=True):
        """Generator L = M^{-1} K (positive semidefinite w.r.t. mu)."""
        L = sp.diags(1.0 / self._mu) @ self.stiffness()
        return L.toarray() if dense else L.tocsr()

    def apply_generator(self, f):
        """(Lf) for f of shape (n,) or (n, k)."""
        f = np.asarray(f, dtype=float)
        Kf = self.stiffness() @ f
        if f.ndim == 1:
            return Kf / self._mu
        return Kf / self._mu[:, None]

    def form(self, f, g=None):
        """The Dirichlet form E(f, g); E(f, f) when g is omitted."""
        f = np.asarray(f, dtype=float)
        g = f if g is None else np.asarray(g, dtype=float)
        i, j, w = self.edges
        return float(np.sum(w * (f[i] - f[j]) * (g[i] - g[j]))
                     + np.sum(self._killing * f * g))

    def form1(self, f):
        """E_1(f) = E(f, f) + ||f||^2_{L^2(mu)}."""
        return self.form(f) + self.inner(f, f)

    def inner(self, f, g):
        return float(np.sum(np.asarray(f) * np.asarray(g) * self._mu))

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        i, j, w = self.edges
        d = {
            "vertices": int(self.n),
            "mu": [float(v) for v in self._mu],
            "edges": [[int(a), int(b), float(c)] for a, b, c in zip(i, j, w)],
            "killing": [float(v) for v in self._killing],
        }
        if self.name:
            d["name"] = self.name
        if self.coords is not None:
            d["coords"] = self.coords.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            n = int(d["vertices"])
            mu = d["mu"]
            edges = d.get("edges", [])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInput(f"malformed space description: {exc}") from exc
        return cls.from_edges(n, edges, mu, killing=d.get("killing"),
                              coords=d.get("coords"), name=d.get("name"))

    @classmethod
    def from_edges(cls, n, edges, mu, killing=None, coords=None, name=None):
        rows, cols, vals = [], [], []
        for e in edges:
            a, b, w = int(e[0]), int(e[1]), float(e[2])
            if a == b:
                raise InvalidGeometry(f"self-loop at vertex {a}")
            if not (0 <= a < n and 0 <= b < n):
                raise InvalidGeometry(f"edge ({a}, {b}) out of range")
            rows += [a, b]
            cols += [b, a]
            vals += [w, w]
        W = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        return cls(mu, W, killing=killing, coords=coords, name=name)

    def content_hash(self):
        """Stable hash of the form data (mu, edges, killing)."""
        d = self.to_dict()
        d.pop("name", None)
        d.pop("coords", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_space(path):
    with open(path) as fh:
        return DirichletSpace.from_dict(json.load(fh))


def save_space(space, path):
    with open(path, "w") as fh:
        json.dump(space.to_dict(), fh, indent=1, sort_keys=True)


class Subdomain:
    """A vertex subset U of a space together with its interior.

    A vertex is interior when all its neighbours lie in U and it carries no
    killing: a killed vertex is joined to vertices removed by an earlier
    Dirichlet restriction, so it always touches the outside.
    """

    def __init__(self, parent: DirichletSpace, members: Iterable[int]):
        m = np.unique(np.asarray(list(members), dtype=np.int64))
        if m.size == 0:
            raise InvalidGeometry("subdomain must be nonempty")
        if m[0] < 0 or m[-1] >= parent.n:
            raise InvalidGeometry("subdomain member out of range")
        self.parent = parent
        self.members = m
        self.members.setflags(write=False)
        mask = np.zeros(parent.n, dtype=bool)
        mask[m] = True
        self.mask = mask
        self.mask.setflags(write=False)

        W = parent.weights
        outside = np.asarray(W @ (~mask).astype(float)).ravel() > 0
        inner = mask & ~outside & (parent.killing == 0)
        self.interior = np.flatnonzero(inner)
        self.interior.setflags(write=False)

    @property
    def size(self):
        return self.members.size

    @property
    def mu_total(self):
        return float(self.parent.mu[self.members].sum())

    def is_connected(self):
        sub = self.parent.weights[self.members][:, self.members]
        return csgraph.connected_components(sub, directed=False)[0] == 1

    def __contains__(self, x):
        return bool(0 <= x < self.parent.n and self.mask[x])

    def __repr__(self):
        return f"<Subdomain |U|={self.size} |interior|={self.interior.size}>"


class Exhaustion:
    """Increasing connected subdomains U_1 ⊆ ... ⊆ U_N = X."""

    def __init__(self, stages: Sequence[Subdomain]):
        if not stages:
            raise InvalidExhaustion("an exhaustion needs at least one stage")
        parent = stages[0].parent
        for k, st in enumerate(stages):
            if st.parent is not parent:
                raise InvalidExhaustion("stages belong to different spaces")
            if not st.is_connected():
                raise InvalidExhaustion(f"stage {k} is disconnected")
            if k and not np.all(stages[k - 1].mask <= st.mask):
                raise InvalidExhaustion(f"stage {k} does not contain stage {k - 1}")
        if stages[-1].size != parent.n:
            raise InvalidExhaustion("final stage must be the whole space")
        self.stages = list(stages)
        self.space = parent

    def __len__(self):
        return len(self.stages)

    def __iter__(self):
        return iter(self.stages)


def exhaustion_of(space, stages):
    """Validate a list of vertex subsets as an exhaustion of ``space``."""
    subs = []
    for k, s in enumerate(stages):
        try:
            subs.append(Subdomain(space, s))
        except InvalidGeometry as exc:
            raise InvalidExhaustion(f"stage {k}: {exc}") from exc
    return Exhaustion(subs)


def ball_exhaustion(space, center, metric=None):
    """Exhaustion by growing hop-distance balls around ``center``."""
    d = graph_metric(space)[center] if metric is None else np.asarray(metric)[center]
    radii = np.unique(d)
    return Exhaustion([Subdomain(space, np.flatnonzero(d <= r)) for r in radii])


def graph_metric(space):
    """All-pairs hop distance."""
    return csgraph.shortest_path(space.weights, directed=False, unweighted=True)


# -- builders -------------------------------------------------------------

def _boundary_pair(boundary):
    if isinstance(boundary, str):
        boundary = (boundary, boundary)
    left, right = boundary
    for b in (left, right):
        if b not in BOUNDARY_KINDS:
            raise InvalidGeometry(f"unknown boundary kind {b!r}")
    return left, right


def build_path(n, spacing=1.0, boundary="reflecting", diffusivity=1.0):
    """Uniform grid on an interval discretizing -diffusivity * d^2/dx^2.

    Vertex measure is ``spacing`` and consecutive conductances are
    ``diffusivity / spacing``; an absorbing end is the Dirichlet restriction
    of a path one vertex longer, i.e. the end vertex gains killing equal to
    the missing conductance. ``diffusivity=0.5`` gives the generator of
    standard Brownian motion.
    """
    if n < 2:
        raise InvalidGeometry("a path needs n >= 2")
    if not spacing > 0 or not diffusivity > 0:
        raise InvalidGeometry("spacing and diffusivity must be positive")
    left, right = _boundary_pair(boundary)
    w = diffusivity / spacing
    edges = [(k, k + 1, w) for k in range(n - 1)]
    killing = np.zeros(n)
    if left == "absorbing":
        killing[0] += w
    if right == "absorbing":
        killing[-1] += w
    coords = (np.arange(n) * spacing)[:, None]
    return DirichletSpace.from_edges(n, edges, np.full(n, float(spacing)),
                                     killing=killing, coords=coords,
                                     name=f"path({n})")


def build_cycle(n, weight=1.0, mu=1.0):
    if n < 3:
        raise InvalidGeometry("a cycle needs n >= 3")
    if not weight > 0 or not mu > 0:
        raise InvalidGeometry("weight and mu must be positive")
    edges = [(k, (k + 1) % n, weight) for k in range(n)]
    ang = 2 * np.pi * np.arange(n) / n
    return DirichletSpace.from_edges(n, edges, np.full(n, float(mu)),
                                     coords=np.c_[np.cos(ang), np.sin(ang)],
                                     name=f"cycle({n})")


def grid_index(nx, ny, i, j):
    return i * ny + j


def build_grid_2d(nx, ny, spacing=1.0, holes=(), diffusivity=1.0):
    """Square grid discretizing -diffusivity * Laplacian with reflecting
    outer boundary; removed ``holes`` (given as (i, j) pairs) act as
    absorbing neighbours.

    Vertex measure is ``spacing**2`` and conductances are ``diffusivity``,
    so a hole neighbour absorbs at rate killing/mu = diffusivity/spacing^2.
    Surviving vertices keep row-major order; ``coords`` holds positions.
    """
    if nx < 1 or ny < 1 or nx * ny < 2:
        raise InvalidGeometry("grid too small")
    if not spacing > 0 or not diffusivity > 0:
        raise InvalidGeometry("spacing and diffusivity must be positive")
    hole_set = set()
    for h in holes:
        i, j = (int(h[0]), int(h[1]))
        if not (1 <= i <= nx - 2 and 1 <= j <= ny - 2):
            raise InvalidGeometry(f"hole {(i, j)} is not strictly interior")
        hole_set.add((i, j))
    w = float(diffusivity)
    full_edges = []
    for i in range(nx):
        for j in range(ny):
            if i + 1 < nx:
                full_edges.append((grid_index(nx, ny, i, j), grid_index(nx, ny, i + 1, j), w))
            if j + 1 < ny:
                full_edges.append((grid_index(nx, ny, i, j), grid_index(nx, ny, i, j + 1), w))
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    coords = np.c_[ii.ravel(), jj.ravel()] * spacing
    full = DirichletSpace.from_edges(nx * ny, full_edges, np.full(nx * ny, spacing ** 2),
                                     coords=coords, name=f"grid({nx}x{ny})")
    if not hole_set:
        return full
    removed = {grid_index(nx, ny, i, j) for i, j in hole_set}
    keep = [v for v in range(nx * ny) if v not in removed]
    out = restrict(full, keep)
    out.name = f"grid({nx}x{ny})-{len(hole_set)}holes"
    return out


def build_random(n, seed=0, edge_prob=0.2, killing_prob=0.0, mu_range=(0.5, 2.0),
                 weight_range=(0.5, 2.0)):
    """Random connected weighted graph: a random spanning tree plus each
    remaining pair with probability ``edge_prob``. Each vertex is killed
    with probability ``killing_prob`` (rate drawn from ``weight_range``)."""
    if n < 2:
        raise InvalidGeometry("a random space needs n >= 2")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    pairs = {(min(a, b), max(a, b))
             for a, b in ((order[k], order[rng.integers(k)]) for k in range(1, n))}
    iu, ju = np.triu_indices(n, k=1)
    extra = rng.random(iu.size) < edge_prob
    pairs.update(zip(iu[extra].tolist(), ju[extra].tolist()))
    pairs = sorted((int(a), int(b)) for a, b in pairs)
    w = rng.uniform(*weight_range, size=len(pairs))
    mu = rng.uniform(*mu_range, size=n)
    killing = np.where(rng.random(n) < killing_prob, rng.uniform(*weight_range, size=n), 0.0)
    edges = [(a, b, c) for (a, b), c in zip(pairs, w)]
    return DirichletSpace.from_edges(n, edges, mu, killing=killing, name=f"random({n},{seed})")


def restrict(space, members):
    """Dirichlet restriction of ``space`` to ``members``.

    The returned space lives on ``sorted(members)`` (re-indexed 0..m-1);
    every cut edge x-y with y outside becomes killing w_xy at x.
    """
    m = np.unique(np.asarray(list(members), dtype=np.int64))
    if m.size == 0:
        raise InvalidGeometry("cannot restrict to an empty set")
    if m[0] < 0 or m[-1] >= space.n:
        raise InvalidGeometry("restriction member out of range")
    W = space.weights
    mask = np.zeros(space.n, dtype=bool)
    mask[m] = True
    cut = np.asarray(W[m] @ (~mask).astype(float)).ravel()
    sub = W[m][:, m]
    coords = None if space.coords is None else space.coords[m]
    try:
        return DirichletSpace(space.mu[m], sub, killing=space.killing[m] + cut,
                              coords=coords, name=space.name)
    except InvalidGeometry as exc:
        raise InvalidGeometry(f"restriction rejected: {exc}") from exc
