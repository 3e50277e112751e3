import math

import numpy as np
import pytest

from pdprog.featureset import (
    CORRELATION_PRUNE_THRESHOLD,
    FeatureMatrix,
    FeatureSetId,
    Provenance,
    apply_transforms,
    asymmetry,
    build_feature_set,
    fit_standardize,
    impute_train_median,
    pearson_r,
    prepare_fold,
    prune_correlated,
)

EXPECTED_WIDTHS = {
    FeatureSetId.BASELINE_GAIT: 148,
    FeatureSetId.DELTA_GAIT: 148,
    FeatureSetId.BASELINE_ASYMMETRY: 22,
    FeatureSetId.DELTA_ASYMMETRY: 22,
    FeatureSetId.ALL_GAIT: 340,
    FeatureSetId.CLINICAL: 40,
    FeatureSetId.GAIT_AND_CLINICAL: 380,
}


@pytest.mark.parametrize("set_id", list(FeatureSetId))
def test_widths(tiny_cohort, set_id):
    matrix = build_feature_set(tiny_cohort, set_id)
    assert matrix.values.shape == (len(matrix.subject_ids), EXPECTED_WIDTHS[set_id])
    assert len(matrix.column_names) == EXPECTED_WIDTHS[set_id]
    assert len(set(matrix.column_names)) == len(matrix.column_names)


def test_baseline_gait_is_run_median(tiny_cohort):
    matrix = build_feature_set(tiny_cohort, FeatureSetId.BASELINE_GAIT)
    s = tiny_cohort.subjects[0]
    visit = s.visit(0)
    j = 5
    expected = float(np.median(visit.runs[:, j]))
    assert matrix.values[0, j] == expected


def test_delta_gait_is_month6_minus_baseline(tiny_cohort):
    base = build_feature_set(tiny_cohort, FeatureSetId.BASELINE_GAIT)
    delta = build_feature_set(tiny_cohort, FeatureSetId.DELTA_GAIT)
    s = tiny_cohort.subjects[2]
    row = delta.subject_ids.index(s.id)
    med6 = np.median(s.visit(6).runs, axis=0)
    med0 = np.median(s.visit(0).runs, axis=0)
    np.testing.assert_array_equal(delta.values[row], med6 - med0)
    assert delta.column_names == tuple(n + "_delta" for n in base.column_names)


def test_asymmetry_definition(tiny_cohort):
    asy = build_feature_set(tiny_cohort, FeatureSetId.BASELINE_ASYMMETRY)
    med0 = np.median(tiny_cohort.subjects[0].visit(0).runs, axis=0)
    names = tiny_cohort.device_measure_names
    left_name, right_name = tiny_cohort.lateral_pairs[0]
    left = med0[names.index(left_name)]
    right = med0[names.index(right_name)]
    assert asy.values[0, 0] == asymmetry(left, right) == 1.0 - left / right
    assert asy.column_names[0] == left_name[: -len("_left")] + "_asym"


def test_asymmetry_zero_right_is_nan():
    assert math.isnan(asymmetry(1.0, 0.0))
    assert asymmetry(2.0, 2.0) == 0.0


def test_all_gait_concatenates_blocks(tiny_cohort):
    allg = build_feature_set(tiny_cohort, FeatureSetId.ALL_GAIT)
    base = build_feature_set(tiny_cohort, FeatureSetId.BASELINE_GAIT)
    delta = build_feature_set(tiny_cohort, FeatureSetId.DELTA_GAIT)
    np.testing.assert_array_equal(allg.values[:, :148], base.values)
    np.testing.assert_array_equal(allg.values[:, 148:296], delta.values)
    assert allg.column_names[:148] == base.column_names


def test_clinical_column_order(tiny_cohort):
    clin = build_feature_set(tiny_cohort, FeatureSetId.CLINICAL)
    assert clin.column_names == tiny_cohort.clinical_measure_names
    s = tiny_cohort.subjects[3]
    row = clin.subject_ids.index(s.id)
    for j, name in enumerate(clin.column_names):
        assert clin.values[row, j] == s.clinical[name]


def test_pearson_r_matches_numpy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.normal(size=13)
        y = rng.normal(size=13)
        assert pearson_r(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)


def test_pearson_r_rejects_constant():
    with pytest.raises(ValueError):
        pearson_r(np.ones(5), np.arange(5.0))


def _matrix(values, names=None):
    values = np.asarray(values, dtype=np.float64)
    names = names or tuple(f"f{i}" for i in range(values.shape[1]))
    return FeatureMatrix(
        subject_ids=tuple(f"S{i}" for i in range(values.shape[0])),
        column_names=tuple(names),
        values=values,
        provenance=Provenance(feature_set="clinical"),
    )


def test_impute_uses_train_rows_only():
    m = _matrix([[1.0, 10.0], [3.0, np.nan], [np.nan, 30.0], [100.0, 100.0]])
    out = impute_train_median(m, [0, 1, 2])
    # train median of column 0 over rows {0,1,2} is 2.0 (100.0 unseen)
    assert out.values[2, 0] == 2.0
    assert out.values[1, 1] == 20.0
    assert out.provenance.imputation_medians["f0"] == 2.0
    assert out.provenance.train_subject_ids == ("S0", "S1", "S2")


def test_impute_all_nan_column_gets_zero():
    m = _matrix([[np.nan, 1.0], [np.nan, 2.0]])
    out = impute_train_median(m, [0, 1])
    assert np.all(out.values[:, 0] == 0.0)


def test_prune_drops_later_correlated_column():
    rng = np.random.default_rng(1)
    a = rng.normal(size=30)
    b = a * 2.0 + 1e-9 * rng.normal(size=30)  # |r| ~ 1 with a
    c = rng.normal(size=30)
    m = _matrix(np.column_stack([a, b, c]))
    out = prune_correlated(m, np.arange(30))
    assert out.column_names == ("f0", "f2")
    assert out.provenance.dropped_columns == ("f1",)


def test_prune_threshold_is_strict():
    # |r| exactly at the threshold survives; the contract drops only > t
    rng = np.random.default_rng(2)
    a = rng.normal(size=200)
    b = rng.normal(size=200)
    m = _matrix(np.column_stack([a, b]))
    out = prune_correlated(m, np.arange(200), threshold=1.0)
    assert out.column_names == ("f0", "f1")
    assert CORRELATION_PRUNE_THRESHOLD == 0.8


def test_prune_is_idempotent(tiny_cohort):
    matrix = build_feature_set(tiny_cohort, FeatureSetId.CLINICAL)
    idx = np.arange(len(matrix.subject_ids))
    once = prune_correlated(impute_train_median(matrix, idx), idx)
    twice = prune_correlated(once, idx)
    assert once.column_names == twice.column_names
    np.testing.assert_array_equal(once.values, twice.values)


def test_standardize_train_moments_only():
    m = _matrix([[0.0, 5.0], [2.0, 5.0], [4.0, 5.0], [10.0, 7.0]])
    out = fit_standardize(m, [0, 1, 2])
    train = out.values[:3, 0]
    np.testing.assert_allclose(train.mean(), 0.0, atol=1e-15)
    np.testing.assert_allclose(train.std(), 1.0, atol=1e-15)
    # held-out row scaled by train moments, not its own
    assert out.values[3, 0] == pytest.approx((10.0 - 2.0) / m.values[:3, 0].std())
    # constant-on-train column maps to zeros everywhere
    assert np.all(out.values[:3, 1] == 0.0)


def test_prepare_fold_order_and_replay(tiny_cohort):
    matrix = build_feature_set(tiny_cohort, FeatureSetId.GAIT_AND_CLINICAL)
    train_idx = np.arange(0, len(matrix.subject_ids), 2)
    fitted = prepare_fold(matrix, train_idx, standardize=True)
    assert fitted.values.shape[0] == matrix.values.shape[0]
    assert np.all(np.isfinite(fitted.values))
    # replaying the recorded transforms on the raw matrix reproduces it
    replayed = apply_transforms(matrix, fitted.provenance)
    assert replayed.column_names == fitted.column_names
    np.testing.assert_array_equal(replayed.values, fitted.values)


def test_apply_transforms_rejects_missing_columns(tiny_cohort):
    matrix = build_feature_set(tiny_cohort, FeatureSetId.CLINICAL)
    idx = np.arange(len(matrix.subject_ids))
    fitted = prepare_fold(matrix, idx, standardize=False)
    wrong = _matrix(np.zeros((2, 2)), names=("nonexistent_a", "nonexistent_b"))
    with pytest.raises(ValueError, match="imputation medians"):
        apply_transforms(wrong, fitted.provenance)


def test_provenance_round_trips(tiny_cohort):
    matrix = build_feature_set(tiny_cohort, FeatureSetId.CLINICAL)
    idx = np.arange(len(matrix.subject_ids))
    fitted = prepare_fold(matrix, idx, standardize=True)
    back = Provenance.from_dict(fitted.provenance.to_dict())
    replayed = apply_transforms(matrix, back)
    np.testing.assert_array_equal(replayed.values, fitted.values)


def test_required_months_filter(tiny_cohort):
    # a subject missing month 6 stays in baseline sets, drops from delta sets
    s0 = tiny_cohort.subjects[0]
    no6 = type(s0)(
        id=s0.id,
        clinical=s0.clinical,
        visits=tuple(v for v in s0.visits if v.month != 6),
        age=s0.age,
        is_male=s0.is_male,
    )
    cohort = type(tiny_cohort)(
        subjects=(no6,) + tiny_cohort.subjects[1:],
        clinical_measure_names=tiny_cohort.clinical_measure_names,
        device_measure_names=tiny_cohort.device_measure_names,
        lateral_pairs=tiny_cohort.lateral_pairs,
    )
    base = build_feature_set(cohort, FeatureSetId.BASELINE_GAIT)
    delta = build_feature_set(cohort, FeatureSetId.DELTA_GAIT)
    assert s0.id in base.subject_ids
    assert s0.id not in delta.subject_ids
