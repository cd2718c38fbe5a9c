"""Heat semigroup P_t = exp(-tL), heat kernel and restricted semigroups.

The kernel is normalized against mu, p(t, x, y) = exp(-tL)_{xy} / mu(y), so
that P_t f(x) = sum_y p(t, x, y) f(y) mu(y) and p is symmetric.
"""

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import expm_multiply

from .errors import InvalidGeometry, InvalidInput, InvalidTime
from .space import DirichletSpace, Subdomain, restrict

DENSE_THRESHOLD = 2000
NEGATIVE_EIGENVALUE_TOL = 1e-10


@dataclass(frozen=True)
class AtomicMeasure:
    """Nonnegative point masses nu({x}) on the vertices of a space."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.array(self.mass, dtype=float).ravel()
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise InvalidInput("measure masses must be finite and nonnegative")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @classmethod
    def delta(cls, n, y, weight=1.0):
        m = np.zeros(n)
        m[y] = weight
        return cls(m)

    @classmethod
    def zero(cls, n):
        return cls(np.zeros(n))

    @classmethod
    def from_density(cls, density, mu):
        """The measure density * mu (negative parts clipped to zero)."""
        return cls(np.clip(np.asarray(density, dtype=float), 0, None) * np.asarray(mu))

    @property
    def total(self):
        return float(self.mass.sum())

    @property
    def support(self):
        return np.flatnonzero(self.mass > 0)

    def integrate(self, f):
        return float(np.dot(self.mass, f))

    def __add__(self, other):
        return AtomicMeasure(self.mass + other.mass)

    def scaled(self, c):
        return AtomicMeasure(self.mass * c)


class HeatEngine:
    """Factorized heat semigroup of a DirichletSpace.

    With ``method="dense-spectral"`` the symmetrized generator
    M^{1/2} L M^{-1/2} is diagonalized once; ``"expm-action"`` keeps L sparse
    and evaluates exp(-tL) f by scipy's truncated Taylor action, for spaces
    above ``dense_threshold`` vertices.
    """

    def __init__(self, space: DirichletSpace, method="auto", dense_threshold=DENSE_THRESHOLD):
        self.space = space
        if method == "auto":
            method = "dense-spectral" if space.n <= dense_threshold else "expm-action"
        if method not in ("dense-spectral", "expm-action"):
            raise InvalidInput(f"unknown method {method!r}")
        self.method = method
        self.dense_threshold = dense_threshold
        self._restricted = {}
        self.spectrum = None
        self.basis = None
        if method == "dense-spectral":
            self._factorize()
        else:
            self._L = space.generator(dense=False)

    def _factorize(self):
        space = self.space
        s = 1.0 / np.sqrt(space.mu)
        K = space.stiffness().toarray()
        S = s[:, None] * K * s[None, :]
        S = 0.5 * (S + S.T)
        lam, V = sla.eigh(S)
        tol = NEGATIVE_EIGENVALUE_TOL * max(1.0, abs(lam[-1]))
        if lam[0] < -tol:
            raise InvalidGeometry(f"generator has negative eigenvalue {lam[0]:.3e}")
        lam = np.where(lam < 0, 0.0, lam)
        phi = s[:, None] * V
        lam.setflags(write=False)
        phi.setflags(write=False)
        self.spectrum = lam
        self.basis = phi

    def __repr__(self):
        return f"<HeatEngine {self.method} n={self.space.n}>"

    @property
    def n(self):
        return self.space.n

    # -- semigroup --------------------------------------------------------

    def _coeffs(self, f):
        f = np.asarray(f, dtype=float)
        mu = self.space.mu
        mf = f * mu if f.ndim == 1 else f * mu[:, None]
        return self.basis.T @ mf

    def apply(self, t, f):
        """P_t f for f of shape (n,) or (n, k)."""
        if t < 0:
            raise InvalidTime(f"t must be nonnegative, got {t}")
        f = np.asarray(f, dtype=float)
        if f.shape[0] != self.n:
            raise InvalidInput("function has wrong length")
        if t == 0:
            return f.copy()
        if self.method == "expm-action":
            return expm_multiply(-t * self._L, f)
        c = self._coeffs(f)
        decay = np.exp(-self.spectrum * t)
        if f.ndim == 1:
            return self.basis @ (decay * c)
        return self.basis @ (decay[:, None] * c)

    def evolve(self, times, f):
        """Rows P_{t_k} f for every t_k in ``times``; shape (len(times), n)."""
        times = np.asarray(times, dtype=float).ravel()
        if np.any(times < 0):
            raise InvalidTime("evolution times must be nonnegative")
        f = np.asarray(f, dtype=float)
        if self.method == "expm-action":
            return np.array([self.apply(t, f) for t in times])
        c = self._coeffs(f)
        out = (np.exp(-np.outer(times, self.spectrum)) * c) @ self.basis.T
        out[times == 0] = f
        return out

    def apply_measure(self, t, nu: AtomicMeasure):
        """P_t nu(x) = sum_y p(t, x, y) nu({y})."""
        if not t > 0:
            raise InvalidTime(f"t must be positive for a measure, got {t}")
        return self.apply(t, nu.mass / self.space.mu)

    def evolve_measure(self, times, nu: AtomicMeasure):
        times = np.asarray(times, dtype=float)
        if np.any(times <= 0):
            raise InvalidTime("measure evolution needs positive times")
        return self.evolve(times, nu.mass / self.space.mu)

    # -- kernel -----------------------------------------------------------

    def kernel_matrix(self, t):
        """Symmetric matrix p(t, ., .)."""
        if not t > 0:
            raise InvalidTime(f"t must be positive, got {t}")
        mu = self.space.mu
        if self.method == "expm-action":
            P = expm_multiply(-t * self._L, np.diag(1.0 / mu))
        else:
            P = (self.basis * np.exp(-self.spectrum * t)) @ self.basis.T
        return 0.5 * (P + P.T)

    def heat_kernel(self, t, x, y):
        if not t > 0:
            raise InvalidTime(f"t must be positive, got {t}")
        if self.method == "expm-action":
            a = self.apply(t, _unit(self.n, y) / self.space.mu[y])[x]
            b = self.apply(t, _unit(self.n, x) / self.space.mu[x])[y]
            return float(0.5 * (a + b))
        return float(np.sum(np.exp(-self.spectrum * t) * (self.basis[x] * self.basis[y])))

    def transition_matrix(self, t):
        """exp(-tL) as a matrix (rows are sub-probability vectors)."""
        if t == 0:
            return np.eye(self.n)
        return self.kernel_matrix(t) * self.space.mu[None, :]

    # -- restriction ------------------------------------------------------

    def restricted(self, U: Subdomain):
        """Engine of the Dirichlet restriction to U (cached)."""
        if U.parent is not self.space:
            raise InvalidInput("subdomain belongs to a different space")
        key = U.members.tobytes()
        eng = self._restricted.get(key)
        if eng is None:
            eng = HeatEngine(restrict(self.space, U.members), method="auto",
                             dense_threshold=self.dense_threshold)
            self._restricted[key] = eng
        return eng

    def restricted_apply(self, U: Subdomain, t, f):
        """P_t^U f: killed outside U, extended by zero."""
        f = np.asarray(f, dtype=float)
        if U.size == self.n:
            return self.apply(t, f)
        out = np.zeros_like(f)
        out[U.members] = self.restricted(U).apply(t, f[U.members])
        return out

    def restricted_evolve(self, U: Subdomain, times, f):
        f = np.asarray(f, dtype=float)
        if U.size == self.n:
            return self.evolve(times, f)
        out = np.zeros((len(times), self.n))
        out[:, U.members] = self.restricted(U).evolve(times, f[U.members])
        return out


def _unit(n, y):
    e = np.zeros(n)
    e[y] = 1.0
    return e


_ENGINE_CACHE = {}


def engine_for(space, method="auto"):
    """Engine cache keyed by the content hash of the space description."""
    key = (space.content_hash(), method)
    eng = _ENGINE_CACHE.get(key)
    if eng is None:
        if len(_ENGINE_CACHE) > 64:
            _ENGINE_CACHE.clear()
        eng = HeatEngine(space, method=method)
        _ENGINE_CACHE[key] = eng
    return eng


def heat_kernel(engine, t, x, y):
    return engine.heat_kernel(t, x, y)


def apply_semigroup(engine, t, f):
    return engine.apply(t, f)


def apply_semigroup_measure(engine, t, nu):
    return engine.apply_measure(t, nu)


def restricted_semigroup(engine, U, t, f):
    return engine.restricted_apply(U, t, f)


def dump_kernel_csv(engine, times, pairs, fh):
    """Write rows (t, x, y, p) for every requested time and vertex pair."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "x", "y", "p"])
    for t in times:
        P = engine.kernel_matrix(t)
        for x, y in pairs:
            writer.writerow([repr(float(t)), int(x), int(y), repr(float(P[x, y]))])
