import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import strategies as st

from heatlab.space import DirichletSpace, build_random


def expm_kernel(space, t):
    """Oracle kernel exp(-tL) / mu from scipy's scaling-and-squaring expm."""
    L = space.generator(dense=True)
    return sla.expm(-t * L) / space.mu[None, :]


def expm_transition(space, t):
    return sla.expm(-t * space.generator(dense=True))


def cycle_kernel(n, t, x, y):
    """Closed form on the unit cycle: (1/n) sum_k exp(-t lam_k) cos(2 pi k (x-y)/n)."""
    k = np.arange(n)
    lam = 2 - 2 * np.cos(2 * np.pi * k / n)
    return float(np.sum(np.exp(-t * lam) * np.cos(2 * np.pi * k * (x - y) / n)) / n)


@st.composite
def spaces(draw, min_n=2, max_n=12, killing=None):
    """Random connected spaces drawn through the seeded builder."""
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**31 - 1))
    prob = draw(st.sampled_from([0.0, 0.2, 0.5]))
    if killing is None:
        kp = draw(st.sampled_from([0.0, 0.3]))
    else:
        kp = killing
    return build_random(n, seed, prob, kp)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_space(rng, n, killing_prob=0.0, edge_prob=0.2):
    return build_random(n, int(rng.integers(2**31)), edge_prob, killing_prob)


def single_vertex(killing=1.0, mu=1.0):
    return DirichletSpace([mu], np.zeros((1, 1)), killing=[killing])


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
