import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from rayknight.stats import (InsufficientSamplesError, SampleSet, holm, ks_pvalue,
                             ks_statistic, ks_two_sample, moment_compare, monotonicity_check,
                             qq_points)

samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=10, max_size=60)


class TestKS:
    def test_identical(self):
        a = np.arange(20.0)
        r = ks_two_sample(a, a.copy())
        assert r.d_stat == 0 and r.p_value == 1 and r.passed

    def test_disjoint(self):
        assert ks_statistic(np.zeros(4), np.ones(4)) == 1.0

    def test_minimum_size(self):
        with pytest.raises(InsufficientSamplesError):
            ks_two_sample(np.zeros(9), np.zeros(30))

    @given(samples, samples, st.randoms())
    def test_symmetric_and_permutation_invariant(self, a, b, rnd):
        d = ks_statistic(np.array(a), np.array(b))
        assert 0 <= d <= 1
        assert ks_statistic(np.array(b), np.array(a)) == d
        a2 = list(a)
        rnd.shuffle(a2)
        assert ks_statistic(np.array(a2), np.array(b)) == d

    @given(samples, samples)
    def test_matches_scipy_statistic(self, a, b):
        assert ks_statistic(np.array(a), np.array(b)) == pytest.approx(
            sps.ks_2samp(a, b).statistic, abs=1e-12)

    @given(st.floats(0, 1), st.floats(0, 1), st.integers(10, 10_000), st.integers(10, 10_000))
    def test_pvalue_monotone(self, d1, d2, n, m):
        lo, hi = sorted((d1, d2))
        assert ks_pvalue(hi, n, m) <= ks_pvalue(lo, n, m)
        assert 0 <= ks_pvalue(lo, n, m) <= 1

    def test_pvalue_close_to_scipy_asymptotic(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=3000), rng.normal(0.05, size=3000)
        ours = ks_two_sample(a, b).p_value
        ref = sps.ks_2samp(a, b, method="asymp").pvalue
        assert ours == pytest.approx(ref, rel=0.05, abs=1e-3)

    def test_null_quantile(self):
        # D < 1.63 / sqrt(n/2) with probability ~0.99 under the null
        rng = np.random.default_rng(4)
        crit = 1.63 / math.sqrt(5000)
        hits = sum(ks_statistic(rng.normal(size=10_000), rng.normal(size=10_000)) < crit
                   for _ in range(100))
        assert hits >= 96


class TestMoments:
    def test_identical_sets(self):
        a = np.random.default_rng(5).normal(size=100)
        r = moment_compare(a, a.copy())
        assert r.z_scores == {"mean": 0.0, "var": 0.0}

    def test_shifted_by_ten_stderr(self):
        a = np.random.default_rng(6).normal(size=10_000)
        se = a.std(ddof=1) / math.sqrt(a.size)
        r = moment_compare(a + 10 * math.sqrt(2) * se, a)
        assert r.z_scores["mean"] == pytest.approx(10, rel=1e-6)

    def test_variances_nonnegative(self):
        r = moment_compare(np.ones(10), np.zeros(10))
        assert r.var_a >= 0 and r.var_b >= 0


class TestHolm:
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.sampled_from([0.01, 0.05]))
    def test_matches_statsmodels(self, p, alpha):
        from statsmodels.stats.multitest import multipletests

        ref = multipletests(p, alpha=alpha, method="holm")[0]
        assert np.array_equal(holm(p, alpha), ref)

    def test_step_down(self):
        assert holm([0.001, 0.02, 0.03], 0.05).tolist() == [True, True, True]
        assert holm([0.001, 0.04, 0.03], 0.05).tolist() == [True, False, False]


class TestMonotonicity:
    def test_violation_located(self):
        m = np.array([[1.0, 1.0, 0.5], [1.0, 0.9, 0.6], [2.0, 2.0, 2.0]])
        assert monotonicity_check(m) == (False, (1, 1))

    def test_equal_rows_pass(self):
        m = np.array([[1.0, 0.5], [1.0, 0.5]])
        assert monotonicity_check(m) == (True, None)

    def test_empty(self):
        with pytest.raises(ValueError):
            monotonicity_check(np.zeros((0, 0)))


class TestSampleSet:
    def test_non_finite(self):
        with pytest.raises(ValueError):
            SampleSet([1.0, math.nan])

    def test_qq_shape(self):
        q = qq_points(np.arange(100.0), np.arange(100.0))
        assert q.shape == (99, 3)
        np.testing.assert_allclose(q[:, 1], q[:, 2])
