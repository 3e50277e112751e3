import numpy as np
import pytest
from scipy import stats

from pdprog.metrics import (
    ImportanceReport,
    classify_fast_from_regression,
    paired_t_test,
    permutation_importance,
    ppv,
    r2,
)


class TestR2:
    def test_matches_definition(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=25)
        pred = y + rng.normal(scale=0.5, size=25)
        ss_res = float(np.sum((y - pred) ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        assert r2(y, pred) == pytest.approx(1.0 - ss_res / ss_tot, rel=1e-14)

    def test_perfect_and_mean_prediction(self):
        y = np.array([1.0, 2.0, 4.0])
        assert r2(y, y) == 1.0
        assert r2(y, np.full(3, y.mean())) == pytest.approx(0.0, abs=1e-15)

    def test_worse_than_mean_goes_negative(self):
        y = np.array([1.0, 2.0, 3.0])
        assert r2(y, np.array([3.0, 2.0, 1.0])) < 0.0

    def test_rejects_degenerate_input(self):
        with pytest.raises(ValueError, match="equal-length"):
            r2([1.0, 2.0], [1.0])
        with pytest.raises(ValueError, match="at least two"):
            r2([1.0], [1.0])
        with pytest.raises(ValueError, match="constant"):
            r2([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


def test_fast_progressor_threshold_is_inclusive():
    calls = classify_fast_from_regression([0.19, 0.2, 0.21], threshold=0.2)
    np.testing.assert_array_equal(calls, [False, True, True])


class TestPpv:
    def test_counts_true_positives_over_called(self):
        predicted = [True, True, True, False]
        actual = [True, False, True, True]
        assert ppv(predicted, actual) == pytest.approx(2 / 3)

    def test_none_when_nothing_called(self):
        assert ppv([False, False], [True, False]) is None

    def test_all_correct(self):
        assert ppv([True, True], [True, True]) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="align"):
            ppv([True], [True, False])


class TestPairedT:
    def test_unit_differences(self):
        # d = (1, 2, 3): mean 2, sd 1 -> t = 2 sqrt(3), df = 2
        t, p = paired_t_test([2.0, 4.0, 6.0], [1.0, 2.0, 3.0])
        assert t == pytest.approx(2.0 * np.sqrt(3.0), rel=1e-12)
        assert p == pytest.approx(1.0 - np.sqrt(6.0 / 7.0), rel=1e-12)

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(7)
        for n in (2, 3, 5, 20, 101):
            a = rng.normal(size=n)
            b = rng.normal(size=n)
            t, p = paired_t_test(a, b)
            want = stats.ttest_rel(a, b)
            assert t == pytest.approx(want.statistic, rel=1e-12)
            assert p == pytest.approx(want.pvalue, rel=1e-10)

    def test_identical_samples(self):
        assert paired_t_test([1.0, 2.0], [1.0, 2.0]) == (0.0, 1.0)

    def test_swapping_sides_negates_t(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=9)
        b = rng.normal(size=9)
        t_ab, p_ab = paired_t_test(a, b)
        t_ba, p_ba = paired_t_test(b, a)
        assert t_ab == pytest.approx(-t_ba)
        assert p_ab == pytest.approx(p_ba)

    def test_degenerate_inputs(self):
        with pytest.raises(ValueError, match="at least two"):
            paired_t_test([1.0], [0.0])
        with pytest.raises(ValueError, match="zero variance"):
            paired_t_test([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])


class _FirstColumn:
    """Tiny stand-in model: predicts 3 * x0 and ignores every other column."""

    def predict(self, X):
        return 3.0 * np.asarray(X)[:, 0]


class TestPermutationImportance:
    def _data(self, n=40, d=3, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, d))
        y = 3.0 * X[:, 0] + rng.normal(scale=0.1, size=n)
        return X, y

    def test_unused_column_has_exactly_zero_drop(self):
        X, y = self._data()
        report = permutation_importance(_FirstColumn(), X, y, n_repeats=5)
        # permuting a column the model never reads cannot change predictions
        assert np.all(report.mean_drop[1:] == 0.0)
        assert np.all(report.sd_drop[1:] == 0.0)
        assert report.mean_drop[0] > 0.1

    def test_baseline_is_unpermuted_r2(self):
        X, y = self._data()
        model = _FirstColumn()
        report = permutation_importance(model, X, y, n_repeats=3)
        assert report.baseline_r2 == pytest.approx(r2(y, model.predict(X)))

    def test_accepts_bare_callable(self):
        X, y = self._data()
        report = permutation_importance(lambda M: 3.0 * M[:, 0], X, y, n_repeats=3)
        assert report.mean_drop[0] > 0.0

    def test_deterministic_in_seed(self):
        X, y = self._data()
        a = permutation_importance(_FirstColumn(), X, y, n_repeats=4, seed=5)
        b = permutation_importance(_FirstColumn(), X, y, n_repeats=4, seed=5)
        np.testing.assert_array_equal(a.mean_drop, b.mean_drop)
        np.testing.assert_array_equal(a.sd_drop, b.sd_drop)

    def test_columns_use_independent_streams(self):
        # a column's importance must not shift when another column's repeat
        # count is irrelevant; same seed, same column -> same drops
        X, y = self._data(d=4)
        full = permutation_importance(_FirstColumn(), X, y, n_repeats=6, seed=2)
        again = permutation_importance(
            _FirstColumn(), X[:, :2], y, n_repeats=6, seed=2
        )
        assert full.mean_drop[0] == again.mean_drop[0]

    def test_feature_names_and_ranking(self):
        X, y = self._data()
        report = permutation_importance(
            _FirstColumn(), X, y, n_repeats=3, feature_names=["a", "b", "c"]
        )
        ranking = report.ranking()
        assert ranking[0][0] == "a"
        # zero-drop columns keep their original order (stable sort)
        assert [name for name, _, _ in ranking[1:]] == ["b", "c"]
        assert report.top(2) == ranking[:2]

    def test_name_length_validated(self):
        X, y = self._data()
        with pytest.raises(ValueError, match="feature_names"):
            permutation_importance(_FirstColumn(), X, y, feature_names=["x"])
        with pytest.raises(ValueError, match="n_repeats"):
            permutation_importance(_FirstColumn(), X, y, n_repeats=0)

    def test_rejects_model_without_predict(self):
        X, y = self._data()
        with pytest.raises(TypeError, match="predict"):
            permutation_importance(object(), X, y)

    def test_default_names(self):
        X, y = self._data(d=2)
        report = permutation_importance(_FirstColumn(), X, y, n_repeats=2)
        assert report.feature_names == ("feature_0", "feature_1")


def test_report_ranking_is_stable_for_ties():
    report = ImportanceReport(
        feature_names=("p", "q", "r"),
        baseline_r2=0.5,
        mean_drop=np.array([0.1, 0.3, 0.1]),
        sd_drop=np.zeros(3),
    )
    assert [name for name, _, _ in report.ranking()] == ["q", "p", "r"]
