import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from l2contract.hyptest import (TestCase, TestConstants, ball_extremes,
                                block_basis, build_global_test, build_local_test,
                                case_predicates, cover_interval, cover_mean_set,
                                cover_mean_set_count, decay_experiment, evaluate,
                                evaluate_global, fit_decay, global_test_experiment,
                                mc_accept_rate, mc_global_errors, mc_type1_error,
                                mc_type2_error, select_case, sieve_cover, sphere_alternatives)
from l2contract.stat_core import ParamPoint, chi2_upper_tail_bound, make_rng, metric_d

C = TestConstants()


def _pt(mu, s):
    return ParamPoint(np.asarray(mu, dtype=float), s)


class TestSelectCase:
    def test_large_sigma(self):
        assert select_case(_pt([0, 0], 1), _pt([0, 0], 2 * C.M1), C) is TestCase.LARGE_SIGMA

    def test_mean_dominant(self):
        assert select_case(_pt([0, 0], 1), _pt([1, 0], 1), C) is TestCase.MEAN_DOMINANT

    def test_sigma_above_and_below(self):
        assert select_case(_pt([0, 0], 1), _pt([0, 0], 2), C) is TestCase.SIGMA_ABOVE
        assert select_case(_pt([0, 0], 1), _pt([0, 0], 0.5), C) is TestCase.SIGMA_BELOW

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            select_case(_pt([0, 0], 1), _pt([0, 0, 0], 1), C)


_pairs = st.integers(1, 8).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-5, 5), min_size=n, max_size=n), st.floats(0.05, 5),
    st.lists(st.floats(-5, 5), min_size=n, max_size=n), st.floats(0.01, 80),
    st.floats(1.01, 20)))


@settings(max_examples=500, deadline=None)
@given(_pairs)
def test_cases_partition(args):
    m0, s0, m1, s1, M1 = args
    truth, alt = _pt(m0, s0), _pt(m1, s1)
    k = TestConstants(3.0, M1)
    preds = case_predicates(truth, alt, k)
    assert sum(preds.values()) == 1
    assert preds[select_case(truth, alt, k)]


def test_constants_validation():
    with pytest.raises(ValueError):
        TestConstants(0.0, 12.0)
    with pytest.raises(ValueError):
        TestConstants(3.0, 1.0)


class TestBuildLocal:
    def test_case_matches_selector(self):
        truth, alt = _pt([0, 0, 0], 1), _pt([1, 0, 0], 1.2)
        t = build_local_test(truth, alt, 0.5, C)
        assert t.case is select_case(truth, alt, C)

    def test_epsilon_out_of_range(self):
        with pytest.raises(ValueError):
            build_local_test(_pt([0], 1), _pt([5], 1), 1.0, C)
        with pytest.raises(ValueError):
            build_local_test(_pt([0], 1), _pt([5], 1), 0.0, C)

    def test_separation_violated(self):
        truth = _pt([0, 0], 1)
        alt = _pt([0, 0], 1.25)  # d = 0.25 = eps / 2
        with pytest.raises(ValueError):
            build_local_test(truth, alt, 0.5, C)

    def test_alternative_on_sphere_accepted(self):
        truth = _pt(np.zeros(7), 1.3)
        for alt in sphere_alternatives(truth, 0.37, np.linspace(-1.5, 1.5, 13)):
            build_local_test(truth, alt, 0.37, C)


class TestEvaluate:
    def test_case2_rejects(self):
        t = build_local_test(_pt([0, 0], 2), _pt([2, 0], 2), 1.0, C)
        assert t.case is TestCase.MEAN_DOMINANT
        assert evaluate(t, [2.0, 0.0]) == 1
        assert evaluate(t, [0.0, 0.0]) == 0

    def test_case1_boundary_is_strict(self):
        t = build_local_test(_pt(np.zeros(4), 1), _pt(np.zeros(4), 2 * C.M1), 0.5, C)
        assert t.case is TestCase.LARGE_SIGMA
        assert evaluate(t, [3.0, 3.0, 3.0, 3.0]) == 0  # exactly M0^2 n
        assert evaluate(t, [3.0, 3.0, 3.0, 3.0001]) == 1

    def test_case3_and_case4_thresholds(self):
        truth = _pt(np.zeros(4), 1.0)
        above = build_local_test(truth, _pt(np.zeros(4), 1.6), 0.5, C)
        below = build_local_test(truth, _pt(np.zeros(4), 0.4), 0.5, C)
        thr_a = math.sqrt(2 / math.pi) * 0.6 / 12
        thr_b = math.sqrt(2 / math.pi) * (-0.6) / 12
        base = math.sqrt(2 / math.pi)
        assert above.threshold == pytest.approx(thr_a)
        assert below.threshold == pytest.approx(thr_b)
        # mean |y| = base + thr exactly on the boundary: Case 3 accepts, Case 4 rejects
        y_b = np.full(4, base + thr_b)
        assert evaluate(below, y_b) == 1
        assert evaluate(above, np.full(4, base + thr_a + 1e-9)) == 1
        assert evaluate(above, np.full(4, base)) == 0

    def test_batch_matches_rows(self):
        t = build_local_test(_pt(np.zeros(5), 1), _pt(np.ones(5), 1), 0.5, C)
        y = make_rng(2).normal(size=(50, 5))
        batch = t.evaluate(y)
        assert [evaluate(t, row) for row in y] == batch.tolist()


class TestMonteCarlo:
    def test_case2_type1_matches_normal_cdf(self):
        truth, alt = _pt(np.zeros(10), 1.5), _pt(np.full(10, 0.6), 1.5)
        t = build_local_test(truth, alt, 0.5, C)
        e = mc_type1_error(t, 10_000, seed=1)
        exact = stats.norm.cdf(-np.linalg.norm(alt.mu) / (2 * truth.sigma))
        assert abs(e.estimate - exact) < 3 * math.sqrt(exact * (1 - exact) / e.reps)

    def test_single_rep(self):
        t = build_local_test(_pt([0, 0], 1), _pt([1, 1], 1), 0.5, C)
        assert mc_type1_error(t, 1, seed=3).estimate in (0.0, 1.0)

    def test_case1_type1_below_chi2_bound(self):
        n = 20
        k = TestConstants(M0=1.5, M1=12.0)
        t = build_local_test(_pt(np.zeros(n), 1), _pt(np.zeros(n), 13.0), 0.5, k)
        # solve n + 2 sqrt(n t) + 2 t = M0^2 n for t
        target = (k.M0 ** 2 - 1) * n
        r = (-2 * math.sqrt(n) + math.sqrt(4 * n + 8 * target)) / 4
        e = mc_type1_error(t, 20_000, seed=4)
        assert e.estimate <= chi2_upper_tail_bound(n, r * r) + 3 * e.std_error

    def test_case2_type2_at_centre(self):
        truth, alt = _pt(np.zeros(8), 1.0), _pt(np.full(8, 0.3), 1.1)
        t = build_local_test(truth, alt, 0.3, C)
        assert t.case is TestCase.MEAN_DOMINANT
        e = mc_type2_error(t, 20_000, 1, seed=5, radius=0.0)
        exact = stats.norm.cdf(-np.linalg.norm(alt.mu) / (2 * alt.sigma))
        assert abs(e.estimate - exact) < 3 * math.sqrt(exact * (1 - exact) / e.reps)

    def test_case1_type2_noncentral(self):
        n = 6
        truth, alt = _pt(np.zeros(n), 1.0), _pt(np.full(n, 2.0), 12.5)
        t = build_local_test(truth, alt, 0.5, C)
        assert t.case is TestCase.LARGE_SIGMA
        e = mc_type2_error(t, 20_000, 1, seed=6, radius=0.0)
        lam = float(alt.mu @ alt.mu) / alt.sigma ** 2
        exact = stats.ncx2.cdf(C.M0 ** 2 * n / alt.sigma ** 2, n, lam)
        assert e.estimate <= exact + 3 * max(e.std_error, 1e-3)

    def test_zero_radius_reproduces_centre(self):
        t = build_local_test(_pt(np.zeros(5), 1), _pt(np.full(5, 0.5), 1), 0.5, C)
        a = mc_type2_error(t, 5000, 1, seed=7, radius=0.0)
        ss = np.random.SeedSequence(7).spawn(2)[1]
        b = mc_accept_rate(t, t.alt, 5000, ss)
        assert a.estimate == b.estimate

    def test_type2_seeded(self):
        t = build_local_test(_pt(np.zeros(5), 1), _pt(np.full(5, 0.5), 1), 0.5, C)
        assert mc_type2_error(t, 2000, 4, seed=9) == mc_type2_error(t, 2000, 4, seed=9)

    def test_ball_extremes_within_radius(self):
        t = build_local_test(_pt(np.zeros(5), 1), _pt(np.full(5, 0.5), 1), 0.5, C)
        for p in ball_extremes(t, 0.1):
            assert metric_d(p, t.alt) == pytest.approx(0.1)
        t0 = build_local_test(_pt(np.zeros(5), 1), _pt(np.zeros(5), 1.7), 0.5, C)
        assert [p.sigma for p in ball_extremes(t0, 0.1)] == pytest.approx([1.8, 1.6])


class TestCovers:
    def test_interval_example(self):
        assert cover_interval(10, 1) == [1, 3, 5, 7, 9]
        assert cover_interval(1.5, 1) == [1]

    def test_interval_coverage(self):
        rng = make_rng(1)
        centers = np.array(cover_interval(7.3, 0.4))
        pts = rng.uniform(0, 7.3, 1000)
        assert np.all(np.min(np.abs(pts[:, None] - centers), axis=1) <= 0.4)
        assert len(centers) == math.ceil(7.3 / 0.8)

    def test_mean_set_small(self):
        assert len(cover_mean_set(1, 1.0, 1.0)) <= 2

    @pytest.mark.parametrize("dim,h,r", [(2, 1.0, 0.3), (3, 2.0, 0.9), (1, 5.0, 0.2)])
    def test_mean_set_coverage(self, dim, h, r):
        centers = cover_mean_set(dim, h, r)
        pts = make_rng(dim).uniform(-h, h, (1000, dim))
        dist = np.linalg.norm(pts[:, None, :] - centers[None], axis=2).min(axis=1)
        assert np.all(dist <= r + 1e-12)
        assert len(centers) <= (math.ceil(h * math.sqrt(dim) / r) + 1) ** dim

    def test_count_monotone_in_halfwidth(self):
        counts = [cover_mean_set_count(3, h, 0.5) for h in np.linspace(0.1, 5, 30)]
        assert all(b >= a for a, b in zip(counts, counts[1:]))

    def test_guard(self):
        with pytest.raises(ValueError):
            cover_mean_set(8, 10.0, 0.01)

    def test_sorted_order(self):
        c = cover_mean_set(2, 1.0, 0.5)
        assert [tuple(r) for r in c] == sorted(tuple(r) for r in c)

    def test_block_basis_isometry(self):
        B = block_basis(11, 3)
        beta = make_rng(0).normal(size=3)
        assert np.linalg.norm(B @ beta) / math.sqrt(11) == pytest.approx(np.linalg.norm(beta))


class TestGlobal:
    truth = _pt(np.zeros(12), 1.0)

    def _cover(self):
        return sieve_cover(12, 2, 1.0, 2.0, 0.3)

    def test_single_centre_equals_local(self):
        alt = _pt(np.full(12, 0.9), 1.0)
        g = build_global_test(self.truth, [alt], 8.0, 0.1, C)
        t = build_local_test(self.truth, alt, 0.8, C)
        y = make_rng(1).normal(size=(200, 12))
        np.testing.assert_array_equal(g.evaluate(y), t.evaluate(y))

    def test_drops_near_centres(self):
        g = build_global_test(self.truth, self._cover(), 8.0, 0.1, C)
        assert all(metric_d(c, self.truth) >= 0.8 for c in g.centers)
        assert g.dropped + len(g.centers) == len(self._cover())
        assert all(t.epsilon == pytest.approx(0.8) for t in g.local_tests)

    def test_max_over_components(self):
        g = build_global_test(self.truth, self._cover(), 8.0, 0.1, C)
        y = make_rng(3).normal(size=(100, 12)) * 1.3
        brute = np.max([t.evaluate(y) for t in g.local_tests], axis=0)
        np.testing.assert_array_equal(g.evaluate(y), brute)
        assert evaluate_global(g, y[0]) == int(brute[0])

    def test_rejects_small_M(self):
        with pytest.raises(ValueError):
            build_global_test(self.truth, self._cover(), 6.0, 0.1, C)
        with pytest.raises(ValueError):
            build_global_test(self.truth, self._cover(), 8.0, 0.2, C)

    def test_degenerate_cover_flagged(self):
        with pytest.warns(UserWarning):
            g = build_global_test(self.truth, [self.truth], 8.0, 0.1, C)
        assert g.degenerate and g.flags
        assert evaluate_global(g, np.full(12, 100.0)) == 0

    def test_near_sigma_flagged(self):
        with pytest.warns(UserWarning):
            g = build_global_test(self.truth, self._cover(), 9.5, 0.1, C)
        assert any("0.9" in f for f in g.flags)

    def test_type1_bounds(self):
        g = build_global_test(self.truth, self._cover(), 8.0, 0.1, C)
        reps = 5000
        gc, lc = mc_global_errors(g, [self.truth], reps, seed=4)
        glob = gc[0] / reps
        local = lc[0] / reps
        se = math.sqrt(glob * (1 - glob) / reps + np.sum(local * (1 - local) / reps))
        assert glob <= local.sum() + 3 * se
        assert glob <= len(local) * local.max() + 3 * se

    def test_experiment_report(self):
        rep = global_test_experiment(1.0, 12, 2, 1.0, 2.0, 0.3, 8.0, 0.1, 3000, seed=2,
                                     type2_points=5)
        assert rep.union_bound_holds
        assert rep.max_type2_excess <= 0
        assert len(rep.type2_points) == 5

    def test_experiment_center_limit(self):
        with pytest.raises(ValueError):
            global_test_experiment(1.0, 12, 2, 1.0, 2.0, 0.1, 8.0, 0.1, 100, seed=2)


def test_decay_experiment_small():
    rows = decay_experiment(1.0, 100, [5, 20, 60], 2000, seed=1)
    assert [r.x for r in rows] == [5, 20, 60]
    assert rows[-1].type1 <= rows[0].type1
    assert rows == decay_experiment(1.0, 100, [5, 20, 60], 2000, seed=1)


def test_fit_decay_exact_exponential():
    x = np.array([5, 10, 20, 40.0])
    slope, r2 = fit_decay(x, np.exp(-0.1 * x), 10**9)
    assert slope == pytest.approx(-0.1)
    assert r2 == pytest.approx(1.0)
