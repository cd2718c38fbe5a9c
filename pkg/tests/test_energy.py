import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import spaces
from heatlab import InvalidBall, InvalidCutoff, InvalidInput
from heatlab.energy import (CutoffFunction, check_cutoff_sobolev, check_doubling_poincare,
                            check_energy_identities, cutoff_constant, cutoff_for, dual_bound,
                            energy_functional, energy_measure, gamma_form, intrinsic_distance,
                            intrinsic_metric, length_metric, ramp_cutoff)
from heatlab.space import (Subdomain, build_cycle, build_grid_2d, build_path, build_random,
                           graph_metric)


def _e1(space, f):
    return space.form(f, f) + float(np.dot(f * f, space.mu))


class TestEnergyMeasure:
    def test_two_vertex_path(self):
        sp = build_path(2)
        np.testing.assert_array_equal(energy_measure(sp, [0.0, 1.0]).density, [0.5, 0.5])

    def test_constants_have_no_energy(self):
        sp = build_random(10, 1, 0.3, 0.3)
        assert energy_measure(sp, np.full(10, 3.0)).total == 0.0

    def test_killing_ignored(self):
        a = build_path(4)
        b = build_path(4, boundary=("absorbing", "absorbing"))
        f = np.array([1.0, -2.0, 0.5, 4.0])
        np.testing.assert_array_equal(energy_measure(a, f).density,
                                      energy_measure(b, f).density)

    @given(spaces(), st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_total_is_killing_free_form(self, space, seed):
        f = np.random.default_rng(seed).standard_normal(space.n)
        tot = energy_measure(space, f).total
        ref = space.form(f, f) - float(np.sum(space.killing * f * f))
        assert abs(tot - ref) <= 1e-12 * max(1.0, abs(ref))
        assert abs(tot - gamma_form(space, f)) <= 1e-12 * max(1.0, abs(ref))

    @given(spaces(), st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_polarization(self, space, seed):
        f, g = np.random.default_rng(seed).standard_normal((2, space.n))
        lhs = energy_measure(space, f, g).density
        rhs = 0.25 * (energy_measure(space, f + g).density - energy_measure(space, f - g).density)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.abs(lhs).max())

    @given(spaces(), st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_functional_is_integral_of_density(self, space, seed):
        r = np.random.default_rng(seed)
        f, phi = r.standard_normal(space.n), r.random(space.n)
        lhs = energy_functional(space, f, phi)
        rhs = 2 * energy_measure(space, f).integrate(phi)
        assert abs(lhs - rhs) <= 1e-11 * max(1.0, abs(rhs))
        assert lhs >= -1e-12


class TestIdentities:
    def test_random_quadruples_on_cycle(self, rng):
        sp = build_cycle(7)
        worst = 0.0
        for _ in range(1000):
            f, g, h, k = rng.uniform(-1, 1, (4, 7))
            rep = check_energy_identities(sp, f, g, h, k)
            assert rep.passed, rep
            worst = max(worst, rep.leibniz_symmetrized)
        assert worst <= 1e-12

    def test_naive_leibniz_is_only_approximate(self, rng):
        sp = build_cycle(7)
        f, g, h, k = rng.uniform(-1, 1, (4, 7))
        rep = check_energy_identities(sp, f, g, h, k)
        assert rep.leibniz_naive > 1e-6

    def test_report_keys(self, rng):
        sp = build_random(9, 3, 0.3, 0.2)
        d = check_energy_identities(sp, *rng.standard_normal((4, 9))).to_dict()
        assert {"leibniz_symmetrized", "cauchy_schwarz_slack", "amgm_slack",
                "product_bound_slack", "passed"} <= set(d)


class TestIntrinsicDistance:
    def test_two_vertex_path(self):
        lo, hi = intrinsic_distance(build_path(2), 0, 1)
        assert lo == pytest.approx(np.sqrt(2), abs=1e-6)
        assert hi - lo < 1e-6

    def test_same_vertex(self):
        assert intrinsic_distance(build_path(3), 1, 1) == (0.0, 0.0)

    def test_bracket_and_length_metric(self):
        sp = build_random(12, 4, 0.3)
        lm = length_metric(sp)
        for y in (3, 7, 11):
            lo, hi = intrinsic_distance(sp, 0, y)
            assert lo <= hi + 1e-12
            assert hi - lo <= 1e-6 * max(1.0, hi)
            assert hi <= lm[0, y] + 1e-9

    def test_dual_bound_is_upper(self):
        sp = build_random(8, 6, 0.3)
        lo, hi = intrinsic_distance(sp, 0, 5)
        for lam in (np.ones(8), np.linspace(0.1, 2, 8)):
            assert dual_bound(sp, 0, 5, lam) >= lo - 1e-9

    @pytest.mark.parametrize("seed", range(3))
    def test_triangle_inequality(self, seed):
        sp = build_random(8, seed, 0.3)
        lo, hi = intrinsic_metric(sp)
        d = 0.5 * (lo + hi)
        slack = 2e-6 * max(1.0, d.max())
        for z in range(8):
            assert np.all(d <= d[:, [z]] + d[[z], :] + slack)
        np.testing.assert_allclose(d, d.T, atol=slack)

    def test_fine_path_is_euclidean(self):
        sp = build_path(50, 0.1, diffusivity=0.5)
        lo, hi = intrinsic_distance(sp, 0, 49)
        euclid = 49 * 0.1
        assert 0.98 * euclid * np.sqrt(2) <= lo <= hi <= 1.02 * euclid * np.sqrt(2) + 1e-9


class TestCutoffs:
    def test_cutoff_for_respects_interior(self):
        sp = build_path(9)
        U = Subdomain(sp, range(1, 8))
        psi = cutoff_for(sp, [4], U)
        assert psi.values[4] == 1.0
        assert np.all(psi.values[[0, 1, 7, 8]] == 0)
        assert np.all(psi.values <= 1)

    def test_cutoff_for_rejects_boundary_k(self):
        sp = build_path(9)
        with pytest.raises(InvalidCutoff):
            cutoff_for(sp, [1], Subdomain(sp, range(1, 8)))

    def test_invalid_values(self):
        with pytest.raises(InvalidCutoff):
            CutoffFunction(np.array([0.5, 1.2]), [])
        with pytest.raises(InvalidCutoff):
            CutoffFunction(np.array([0.5, 0.2]), [0])
        with pytest.raises(InvalidCutoff):
            CutoffFunction(np.array([1.0, 0.2, 0.0]), [0], support=[0])

    def test_constant_of_one_is_one(self):
        sp = build_random(8, 2, 0.3, 0.3)
        psi = CutoffFunction(np.ones(8), range(8))
        assert cutoff_constant(sp, psi) == pytest.approx(1.0, rel=1e-10)

    def test_constant_bounds_random_ratios(self, rng):
        sp = build_path(12, 0.5)
        psi = ramp_cutoff(length_metric(sp), 6, 3.0)
        C = cutoff_constant(sp, psi)
        ratios = []
        for _ in range(300):
            f = rng.standard_normal(12)
            ratios.append(_e1(sp, psi.values * f) / _e1(sp, f))
        assert max(ratios) <= C * (1 + 1e-10)
        assert C >= 1.0 - 1e-12


class TestFunctionalInequalities:
    def test_doubling_and_poincare_finite_on_grid(self):
        sp = build_grid_2d(9, 9, 0.5)
        rep = check_doubling_poincare(sp, radii=(1.0, 1.5), centers=[0, 40])
        assert rep["records"]
        assert np.isfinite(rep["max_doubling"]) and rep["max_doubling"] >= 1
        assert np.isfinite(rep["max_poincare"]) and rep["max_poincare"] > 0

    def test_poincare_constant_bounds_random_functions(self, rng):
        sp = build_path(10)
        d = length_metric(sp)
        rec = check_doubling_poincare(sp, metric=d, radii=(3.0,), centers=[5])["records"][0]
        B = np.flatnonzero(d[5] < 3.0)
        B2 = np.flatnonzero(d[5] < 6.0)
        for _ in range(200):
            f = np.zeros(10)
            f[B2] = rng.standard_normal(B2.size)
            fB = np.average(f[B], weights=sp.mu[B])
            lhs = np.sum((f[B] - fB) ** 2 * sp.mu[B])
            i, j, w = sp.edges
            inner = np.isin(i, B2) & np.isin(j, B2)
            rhs = np.sum(w[inner] * (f[i[inner]] - f[j[inner]]) ** 2)
            assert lhs <= rec["poincare"] * 9.0 * rhs * (1 + 1e-9) + 1e-12

    def test_asymmetric_metric_rejected(self):
        sp = build_path(3)
        d = length_metric(sp)
        d[0, 1] += 1
        with pytest.raises(InvalidInput):
            check_doubling_poincare(sp, metric=d)

    def test_cutoff_sobolev_constant(self):
        sp = build_path(21, 0.25, diffusivity=0.5)
        d = length_metric(sp)
        psi = ramp_cutoff(d, 10, 2.0)
        c2 = check_cutoff_sobolev(sp, psi, 10, 2.0, 0.5, 2.0, 0.5, metric=d)
        assert np.isfinite(c2) and c2 > 0
        with pytest.raises(InvalidBall):
            check_cutoff_sobolev(sp, psi, 10, 2.0, 3.0, 2.0, 0.5, metric=d)


class TestSmallExamples:
    def test_constant_quadruple(self):
        sp = build_cycle(5)
        c = np.full(5, 2.0)
        rep = check_energy_identities(sp, c, c, c, c)
        assert rep.leibniz_naive == rep.leibniz_symmetrized == 0.0
        assert rep.cauchy_schwarz_slack == rep.amgm_slack == rep.product_bound_slack == 0.0

    def test_two_vertex_leibniz(self):
        f = np.array([0.0, 1.0])
        rep = check_energy_identities(build_path(2), f, f, np.ones(2), np.ones(2))
        assert rep.leibniz_symmetrized <= 1e-13

    def test_cycle_doubling_graph_metric(self):
        sp = build_cycle(12)
        rep = check_doubling_poincare(sp, metric=graph_metric(sp), radii=(2.0,))
        assert rep["max_doubling"] <= 2.5

    def test_single_vertex_ball(self):
        sp = build_path(5)
        rec = check_doubling_poincare(sp, metric=graph_metric(sp), radii=(1.0,),
                                      centers=[2])["records"][0]
        assert rec["V_r"] == 1.0
        assert rec["poincare"] == 0.0

    @pytest.mark.xfail(strict=True, reason="lattice effect: P moves 26% between r=2 and r=4")
    def test_poincare_scaling_on_path(self):
        sp = build_path(20)
        d = graph_metric(sp)
        recs = check_doubling_poincare(sp, metric=d, radii=(2.0, 4.0), centers=[10])["records"]
        p2, p4 = (r["poincare"] for r in recs)
        assert abs(p4 - p2) <= 0.2 * p2

    def test_poincare_settles_as_radius_grows(self):
        sp = build_path(40)
        d = graph_metric(sp)
        recs = check_doubling_poincare(sp, metric=d, radii=(2.0, 4.0, 8.0),
                                       centers=[20])["records"]
        p = [r["poincare"] for r in recs]
        assert abs(p[2] - p[1]) < abs(p[1] - p[0])
        assert abs(p[2] - p[1]) <= 0.2 * p[1]

    def test_flat_cutoff_has_zero_constant(self):
        sp = build_path(10)
        psi = CutoffFunction(np.ones(10), range(10))
        assert check_cutoff_sobolev(sp, psi, 5, 3.0, 1.0, 2.0, 1.0) == 0.0

    def test_ramp_on_path30(self):
        sp = build_path(30)
        d = graph_metric(sp)
        psi = ramp_cutoff(d, 15, 10.0)
        c2 = check_cutoff_sobolev(sp, psi, 15, 10.0, 10.0, 2.0, 1.0, metric=d)
        assert 0 < c2 < 100
