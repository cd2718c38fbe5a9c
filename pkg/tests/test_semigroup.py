import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cycle_kernel, expm_kernel, single_vertex, spaces
from heatlab import InvalidTime
from heatlab.semigroup import (AtomicMeasure, HeatEngine, dump_kernel_csv, engine_for,
                               heat_kernel)
from heatlab.space import (Subdomain, build_cycle, build_grid_2d, build_path, build_random,
                           exhaustion_of, restrict)


class TestKernelValues:
    def test_cycle3(self):
        eng = HeatEngine(build_cycle(3))
        diag = (1 + 2 * np.exp(-3)) / 3
        off = (1 - np.exp(-3)) / 3
        assert eng.heat_kernel(1.0, 0, 0) == pytest.approx(diag, abs=1e-14)
        assert eng.heat_kernel(1.0, 0, 1) == pytest.approx(off, abs=1e-14)
        assert diag == pytest.approx(0.366525, abs=5e-7)
        assert off == pytest.approx(0.316738, abs=5e-7)
        np.testing.assert_allclose(eng.kernel_matrix(1.0) @ eng.space.mu, 1.0, atol=1e-14)

    def test_two_vertex_path(self):
        eng = HeatEngine(build_path(2))
        assert eng.heat_kernel(0.5, 0, 0) == pytest.approx((1 + np.exp(-1)) / 2, abs=1e-14)
        assert eng.heat_kernel(0.5, 0, 1) == pytest.approx((1 - np.exp(-1)) / 2, abs=1e-14)

    def test_large_time_equilibrium(self):
        sp = build_random(15, 2, 0.2)
        P = HeatEngine(sp).kernel_matrix(500.0)
        np.testing.assert_allclose(P, 1.0 / sp.total_mass, atol=1e-12)

    def test_cycle_closed_form(self):
        eng = HeatEngine(build_cycle(6))
        for t in (0.01, 1.0, 7.0):
            for y in range(6):
                assert eng.heat_kernel(t, 0, y) == pytest.approx(cycle_kernel(6, t, 0, y),
                                                                 abs=1e-14)

    def test_gaussian_limit(self):
        sp = build_path(100, 0.1, diffusivity=0.5)
        p = HeatEngine(sp).heat_kernel(1.0, 50, 50)
        assert p == pytest.approx(1 / np.sqrt(2 * np.pi), rel=0.02)

    def test_nonpositive_time(self):
        eng = HeatEngine(build_cycle(4))
        for t in (0.0, -1.0):
            with pytest.raises(InvalidTime):
                eng.heat_kernel(t, 0, 1)

    @given(spaces(max_n=20), st.floats(1e-6, 10.0))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_matches_oracle(self, space, t):
        P = HeatEngine(space).kernel_matrix(t)
        np.testing.assert_array_equal(P, P.T)
        oracle = expm_kernel(space, t)
        assert np.max(np.abs(P - oracle)) <= 1e-10 * np.abs(oracle).max()
        assert P.min() > -1e-14

    def test_strict_positivity_small_diameter(self):
        for seed in range(5):
            sp = build_random(40, seed, 0.5)
            assert HeatEngine(sp).kernel_matrix(1e-6).min() >= 0
            assert HeatEngine(sp).kernel_matrix(0.05).min() > 0


class TestSemigroup:
    def test_identity_at_zero(self, rng):
        eng = HeatEngine(build_random(10, 1, 0.3, 0.3))
        f = rng.standard_normal(10)
        out = eng.apply(0.0, f)
        np.testing.assert_array_equal(out, f)
        assert out is not f

    def test_negative_time(self):
        with pytest.raises(InvalidTime):
            HeatEngine(build_cycle(4)).apply(-0.1, np.ones(4))

    def test_conservative_preserves_constants(self):
        eng = HeatEngine(build_random(30, 5, 0.2))
        for t in (0.1, 1.0, 10.0):
            assert np.max(np.abs(eng.apply(t, np.ones(30)) - 1)) <= 1e-12

    def test_absorbing_path_loses_mass(self):
        eng = HeatEngine(build_path(3, boundary=("absorbing", "reflecting")))
        assert np.all(eng.apply(1.0, np.ones(3)) < 1)

    def test_single_killed_vertex(self):
        eng = HeatEngine(single_vertex())
        assert 1 - eng.apply(1.0, [1.0])[0] == pytest.approx(1 - np.exp(-1), abs=1e-15)
        assert 1 - np.exp(-1) == pytest.approx(0.632121, abs=5e-7)

    @given(spaces(max_n=15), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
    @settings(max_examples=50, deadline=None)
    def test_semigroup_law(self, space, t, s):
        eng = HeatEngine(space)
        f = np.random.default_rng(0).standard_normal(space.n)
        lhs = eng.apply(t + s, f)
        rhs = eng.apply(t, eng.apply(s, f))
        assert np.max(np.abs(lhs - rhs)) <= 1e-11 * max(1.0, np.abs(f).max())

    @given(spaces(max_n=15), st.floats(1e-4, 5.0), st.integers(0, 2**31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_markov_and_symmetry(self, space, t, seed):
        eng = HeatEngine(space)
        r = np.random.default_rng(seed)
        f, g = r.random((2, space.n))
        Pf = eng.apply(t, f)
        assert Pf.min() >= -1e-12 and Pf.max() <= 1 + 1e-12
        a = np.sum(g * Pf * space.mu)
        b = np.sum(f * eng.apply(t, g) * space.mu)
        assert abs(a - b) <= 1e-12 * max(1.0, abs(a))

    def test_heat_equation_by_differences(self, rng):
        sp = build_random(12, 3, 0.3, 0.3)
        eng = HeatEngine(sp)
        f = rng.standard_normal(12)
        t = 0.7
        errs = []
        for dt in (1e-2, 5e-3):
            d = (eng.apply(t + dt, f) - eng.apply(t - dt, f)) / (2 * dt)
            errs.append(np.max(np.abs(d + sp.apply_generator(eng.apply(t, f)))))
        assert errs[1] < errs[0] / 3.5

    def test_short_time_convergence(self, rng):
        sp = build_random(20, 8, 0.2, 0.2)
        eng = HeatEngine(sp)
        f = rng.standard_normal(20)
        C = 1.1 * np.abs(sp.apply_generator(f)).max()
        for t in (1e-3, 1e-4, 1e-5):
            assert np.max(np.abs(eng.apply(t, f) - f)) <= C * t

    def test_evolve_rows(self, rng):
        eng = HeatEngine(build_random(8, 2, 0.3, 0.2))
        f = rng.standard_normal(8)
        times = [0.0, 0.3, 2.0]
        rows = eng.evolve(times, f)
        for k, t in enumerate(times):
            np.testing.assert_allclose(rows[k], eng.apply(t, f), atol=1e-14)


class TestMeasures:
    def test_delta_gives_kernel(self):
        eng = HeatEngine(build_cycle(3))
        v = eng.apply_measure(1.0, AtomicMeasure.delta(3, 0))
        np.testing.assert_allclose(v, [0.366525, 0.316738, 0.316738], atol=5e-7)
        np.testing.assert_allclose(v, eng.kernel_matrix(1.0)[:, 0], atol=1e-15)

    def test_measure_needs_positive_time(self):
        eng = HeatEngine(build_cycle(3))
        with pytest.raises(InvalidTime):
            eng.apply_measure(0.0, AtomicMeasure.delta(3, 0))

    def test_negative_mass_rejected(self):
        with pytest.raises(Exception):
            AtomicMeasure([1.0, -0.5])

    @given(spaces(max_n=15), st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_l1_contraction(self, space, seed):
        nu = AtomicMeasure(np.random.default_rng(seed).random(space.n))
        eng = HeatEngine(space)
        for t in (1e-3, 1.0):
            mass = np.sum(eng.apply_measure(t, nu) * space.mu)
            assert mass <= nu.total * (1 + 1e-12)

    def test_weak_convergence(self, rng):
        sp = build_random(15, 6, 0.2, 0.3)
        eng = HeatEngine(sp)
        nu = AtomicMeasure(rng.random(15))
        for _ in range(5):
            f = rng.standard_normal(15)
            lhs = np.sum(f * eng.apply_measure(1e-6, nu) * sp.mu)
            assert abs(lhs - nu.integrate(f)) <= 1e-4 * nu.total * np.abs(f).max()

    def test_joint_continuity(self):
        eng = HeatEngine(build_cycle(5))
        n = 10**4
        a = eng.apply_measure(1 + 1 / n, AtomicMeasure.delta(5, 0, 1 + 1 / n))
        b = eng.apply_measure(1.0, AtomicMeasure.delta(5, 0))
        assert np.max(np.abs(a - b)) <= 1e-3
        n = 10**7
        a = eng.apply_measure(1 + 1 / n, AtomicMeasure.delta(5, 0, 1 + 1 / n))
        assert np.max(np.abs(a - b)) <= 1e-6


class TestRestricted:
    def test_whole_space(self, rng):
        sp = build_random(10, 0, 0.2)
        eng = HeatEngine(sp)
        f = rng.standard_normal(10)
        U = Subdomain(sp, range(10))
        np.testing.assert_array_equal(eng.restricted_apply(U, 0.4, f), eng.apply(0.4, f))

    def test_matches_restricted_space(self, rng):
        sp = build_random(12, 1, 0.3)
        eng = HeatEngine(sp)
        U = Subdomain(sp, range(7))
        if not U.is_connected():
            pytest.skip("random subset disconnected")
        f = rng.random(12)
        out = eng.restricted_apply(U, 0.5, f)
        ref = HeatEngine(restrict(sp, range(7))).apply(0.5, f[:7])
        np.testing.assert_allclose(out[:7], ref, atol=1e-14)
        assert np.all(out[7:] == 0)

    def test_path_subinterval_loses_mass(self):
        sp = build_path(5)
        eng = HeatEngine(sp)
        U = Subdomain(sp, [1, 2, 3])
        out = eng.restricted_apply(U, 1.0, np.ones(5))
        assert np.all(out[[1, 2, 3]] < 1)

    def test_domain_monotonicity(self, rng):
        for seed in range(10):
            sp = build_random(14, seed, 0.2, 0.2)
            eng = HeatEngine(sp)
            stages = list(exhaustion_of(sp, [s.members for s in _balls(sp)]))
            f = rng.random(14)
            prev = np.zeros(14)
            for U in stages:
                cur = eng.restricted_apply(U, 0.8, f)
                assert np.min(cur - prev) >= -1e-12
                prev = cur
            assert np.min(eng.apply(0.8, f) - prev) >= -1e-12

    def test_exhaustion_gap_decreases(self):
        sp = build_path(5)
        eng = HeatEngine(sp)
        ex = exhaustion_of(sp, [[2], [1, 2, 3], range(5)])
        f = np.eye(5)[2]
        full = eng.apply(0.5, f)
        gaps = [np.max(np.abs(eng.restricted_apply(U, 0.5, f) - full)) for U in ex]
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 1e-12


def _balls(space):
    from heatlab.space import ball_exhaustion
    return ball_exhaustion(space, 0)


class TestEngineVariants:
    def test_expm_action_agrees(self, rng):
        sp = build_grid_2d(6, 6, 0.5, holes=[(2, 2)])
        dense = HeatEngine(sp)
        action = HeatEngine(sp, method="expm-action")
        f = rng.standard_normal(sp.n)
        for t in (0.01, 0.5):
            np.testing.assert_allclose(action.apply(t, f), dense.apply(t, f), atol=1e-11)
            assert action.heat_kernel(t, 0, 5) == pytest.approx(dense.heat_kernel(t, 0, 5),
                                                                abs=1e-11)

    def test_unknown_method(self):
        with pytest.raises(Exception):
            HeatEngine(build_cycle(3), method="magic")

    def test_spectrum_invariants(self):
        sp = build_random(25, 9, 0.2)
        eng = HeatEngine(sp)
        assert eng.spectrum.min() >= 0
        assert eng.spectrum[0] == pytest.approx(0.0, abs=1e-12)
        G = eng.basis.T @ (eng.basis * sp.mu[:, None])
        assert np.max(np.abs(G - np.eye(25))) <= 1e-10
        c = eng.basis[:, 0] * np.sign(eng.basis[0, 0])
        np.testing.assert_allclose(c, c[0], rtol=1e-10)

    def test_cache_keyed_by_content(self):
        a = engine_for(build_cycle(7))
        b = engine_for(build_cycle(7))
        assert a is b
        assert heat_kernel(a, 1.0, 0, 1) == a.heat_kernel(1.0, 0, 1)


def test_kernel_dump():
    eng = HeatEngine(build_cycle(3))
    buf = io.StringIO()
    dump_kernel_csv(eng, [1.0], [(0, 0), (0, 1)], buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "t,x,y,p"
    assert float(lines[1].split(",")[3]) == pytest.approx(0.366525, abs=5e-7)
