import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from l2contract.stat_core import (ConvergenceError, ErrorEstimate, ParamPoint, chi2_cdf,
                                  chi2_cdf_lower_bound, chi2_lower_tail_bound,
                                  chi2_lower_tail_report, chi2_sf, chi2_upper_tail_bound,
                                  chi2_upper_tail_report, expected_l1_norm, fit_l1_tail_decay,
                                  make_rng, metric_d, metric_d_many, noncentral_chi2_cdf,
                                  sample_observation, task_seed)


def test_metric_identity():
    a = ParamPoint(np.zeros(4), 1.0)
    assert metric_d(a, a) == 0.0


def test_metric_unit_mean_shift():
    assert metric_d(ParamPoint(np.ones(4), 1.0), ParamPoint(np.zeros(4), 1.0)) == pytest.approx(1.0)


def test_metric_worked_value():
    a = ParamPoint([3.0, 4.0], 2.0)
    b = ParamPoint([0.0, 0.0], 1.0)
    assert metric_d(a, b) == pytest.approx(3.6742346141747673, rel=1e-15)


def test_metric_dimension_mismatch():
    with pytest.raises(ValueError):
        metric_d(ParamPoint(np.zeros(3), 1.0), ParamPoint(np.zeros(4), 1.0))


def test_param_point_validation():
    with pytest.raises(ValueError):
        ParamPoint(np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        ParamPoint([np.nan, 0.0], 1.0)
    p = ParamPoint([1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        p.mu[0] = 5.0


_points = st.integers(1, 6).flatmap(lambda n: st.tuples(*[
    st.tuples(st.lists(st.floats(-50, 50), min_size=n, max_size=n), st.floats(0.01, 20))
    for _ in range(3)]))


@settings(max_examples=300, deadline=None)
@given(_points)
def test_metric_axioms(triple):
    a, b, c = (ParamPoint(m, s) for m, s in triple)
    dab, dba = metric_d(a, b), metric_d(b, a)
    assert dab >= 0
    assert dab == pytest.approx(dba, abs=1e-12)
    assert metric_d(a, c) <= dab + metric_d(b, c) + 1e-12
    # Euclidean distance between (mu / sqrt(n), sigma) embeddings
    assert dab == pytest.approx(float(np.linalg.norm(a.embed() - b.embed())), abs=1e-12)


def test_metric_many_matches_scalar():
    rng = make_rng(1)
    ref = ParamPoint(rng.normal(size=5), 1.3)
    mus = rng.normal(size=(20, 5))
    sig = rng.uniform(0.5, 2, 20)
    got = metric_d_many(mus, sig, ref)
    want = [metric_d(ParamPoint(m, s), ref) for m, s in zip(mus, sig)]
    np.testing.assert_allclose(got, want, rtol=1e-14)


def test_sample_observation_seeded():
    truth = ParamPoint(np.arange(5.0), 2.0)
    np.testing.assert_array_equal(sample_observation(truth, 7), sample_observation(truth, 7))
    assert not np.array_equal(sample_observation(truth, 7), sample_observation(truth, 8))


def test_sample_observation_moments():
    truth = ParamPoint(np.zeros(1000), 1.0)
    y = sample_observation(truth, 3, size=10_000)
    assert abs(y.mean()) < 3 / math.sqrt(y.size)
    assert 0.95 <= y.var(axis=0).mean() <= 1.05
    shifted = ParamPoint(np.full(10, 5.0), 0.5)
    ys = sample_observation(shifted, 4, size=4000)
    assert abs((ys - 5.0).mean()) < 3 * 0.5 / math.sqrt(ys.size)


def test_task_seed_is_keyed_not_ordered():
    a = make_rng(task_seed(11, 2, 3)).random(4)
    b = make_rng(task_seed(11, 2, 3)).random(4)
    c = make_rng(task_seed(11, 3, 2)).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_error_estimate_from_counts():
    e = ErrorEstimate.from_counts(25, 100)
    assert e.estimate == 0.25
    assert e.std_error == pytest.approx(math.sqrt(0.25 * 0.75 / 100))
    assert e.std_error <= 0.5 / math.sqrt(100)
    assert ErrorEstimate.from_counts(0, 10).flagged


def test_chi2_matches_scipy_stats():
    for k in (1, 3, 10, 57):
        x = np.linspace(0.1, 3 * k, 11)
        np.testing.assert_allclose(chi2_cdf(k, x), stats.chi2.cdf(x, k), rtol=1e-12)
        np.testing.assert_allclose(chi2_sf(k, x), stats.chi2.sf(x, k), rtol=1e-10)


def test_upper_tail_examples():
    exact = stats.chi2.sf(10 + 2 * math.sqrt(10) + 2, 10)
    assert chi2_upper_tail_bound(10, 1.0) == pytest.approx(math.exp(-1))
    assert chi2_upper_tail_bound(10, 1.0) >= exact
    assert chi2_upper_tail_bound(1, 0.5) >= stats.chi2.sf(1 + 2 * math.sqrt(0.5) + 1, 1)
    ts = np.linspace(0.1, 30, 50)
    b = [chi2_upper_tail_bound(5, t) for t in ts]
    assert np.all(np.diff(b) < 0)


def test_lower_tail_examples():
    assert chi2_lower_tail_bound(10, 1.0) >= stats.chi2.cdf(10 - 2 * math.sqrt(10), 10)
    assert chi2_lower_tail_bound(50, 2.0) == pytest.approx(math.exp(-2))
    assert chi2_lower_tail_bound(50, 2.0) >= stats.chi2.cdf(50 - 2 * math.sqrt(100), 50)
    # 2 sqrt(k t) >= k: empty event
    rep = chi2_lower_tail_report(4, 1.0)
    assert rep.exact == 0.0 and rep.valid


def test_reports_valid_on_grid():
    for k in range(1, 51):
        for t in np.round(np.arange(1, 101) * 0.1, 10):
            assert chi2_upper_tail_report(k, t).valid
            assert chi2_lower_tail_report(k, t).valid


def test_cdf_lower_bound_examples():
    assert chi2_cdf_lower_bound(2, 2.0) == pytest.approx(math.exp(-1), rel=1e-14)
    assert chi2_cdf_lower_bound(2, 2.0) <= 1 - math.exp(-1)
    assert chi2_cdf_lower_bound(10, 5.0) <= stats.chi2.cdf(5.0, 10)
    assert chi2_cdf_lower_bound(3, 1e-8) < 1e-11
    # large k stays finite thanks to log-space evaluation
    assert 0 <= chi2_cdf_lower_bound(5000, 4000.0) <= stats.chi2.cdf(4000.0, 5000)


def test_bounds_reject_bad_inputs():
    with pytest.raises(ValueError):
        chi2_upper_tail_bound(0, 1.0)
    with pytest.raises(ValueError):
        chi2_cdf_lower_bound(3, 0.0)


def test_expected_l1_norm():
    assert expected_l1_norm(1) == pytest.approx(0.7978845608028654)
    assert expected_l1_norm(100) == pytest.approx(79.78845608028654)
    z = make_rng(5).standard_normal(1_000_000)
    assert abs(np.abs(z).mean() - expected_l1_norm(1)) < 3 * np.abs(z).std() / 1000
    with pytest.raises(ValueError):
        expected_l1_norm(0)


def test_l1_norm_mean_mc():
    z = make_rng(6).standard_normal((100_000, 100))
    s = np.abs(z).sum(axis=1)
    assert abs(s.mean() - expected_l1_norm(100)) < 3 * s.std() / math.sqrt(s.size)


def test_l1_tail_decay_fit():
    fit = fit_l1_tail_decay(100, 50_000, np.linspace(1, 12, 12), seed=8)
    assert fit.slope < 0
    assert fit.k_hat > 0


def test_noncentral_reduces_to_central():
    for t in (0.5, 3.0, 12.0):
        assert noncentral_chi2_cdf(4, 0.0, t) == pytest.approx(stats.chi2.cdf(t, 4), rel=1e-14)


def test_noncentral_matches_scipy_ncx2():
    for k, lam, t in [(5, 3, 10), (1, 0.2, 0.5), (50, 40, 80), (200, 500, 650), (3, 1e-3, 2.0)]:
        assert noncentral_chi2_cdf(k, lam, t) == pytest.approx(stats.ncx2.cdf(t, k, lam), abs=1e-8)


def test_noncentral_mc():
    k, lam, t = 5, 3.0, 10.0
    rng = make_rng(9)
    shift = np.zeros(k)
    shift[0] = math.sqrt(lam)
    x = ((rng.standard_normal((1_000_000, k)) + shift) ** 2).sum(axis=1)
    p = (x <= t).mean()
    se = math.sqrt(p * (1 - p) / x.size)
    assert abs(noncentral_chi2_cdf(k, lam, t) - p) < 3 * se


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.floats(0.0, 50.0), st.floats(0.0, 50.0), st.floats(0.01, 80.0))
def test_noncentral_monotone_in_noncentrality(k, lam1, lam2, t):
    lo, hi = sorted((lam1, lam2))
    assert noncentral_chi2_cdf(k, hi, t) <= noncentral_chi2_cdf(k, lo, t) + 1e-9


def test_noncentral_subnormal_noncentrality():
    assert noncentral_chi2_cdf(1, 5e-324, 1.0) == pytest.approx(float(chi2_cdf(1, 1.0)))


def test_noncentral_reports_nonconvergence():
    with pytest.raises(ConvergenceError):
        noncentral_chi2_cdf(2, 1e7, 1e7, max_terms=10)
