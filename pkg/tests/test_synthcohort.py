import math

import numpy as np
import pytest

from pdprog.cohort import (
    CohortError,
    N_CLINICAL_MEASURES,
    N_DEVICE_MEASURES,
    N_LATERAL_PAIRS,
    RUN_NUMBERS,
    SCHEDULED_MONTHS,
    TargetKind,
    compute_targets,
    label_fast_progressor,
)
from pdprog.synthcohort import (
    CLINICAL_INFORMATIVE_POOL,
    DEVICE_INFORMATIVE_POOL,
    PCT_TOTAL_SD,
    SynthSpec,
    SynthSpecError,
    generate_cohort,
    planted_truth,
    randomize_targets,
)


class TestSpecValidation:
    def test_defaults_are_valid(self):
        spec = SynthSpec()
        assert spec.n_subjects == 160
        assert spec.mean_pct_change == pytest.approx(0.1375)

    def test_round_trip(self):
        spec = SynthSpec(n_subjects=20, target_r2=0.3, seed=5)
        assert SynthSpec.from_dict(spec.to_dict()) == spec

    def test_unknown_field_rejected(self):
        with pytest.raises(SynthSpecError, match="unknown spec fields"):
            SynthSpec.from_dict({"n_subjects": 10, "n_informativ": 2})

    @pytest.mark.parametrize(
        "kwargs,match",
        [
            (dict(n_subjects=0), "at least 1"),
            (dict(baseline_mean=0.0), "positive"),
            (dict(fraction_male=1.5), "fraction_male"),
            (dict(target_r2=0.0), "strictly inside"),
            (dict(target_r2=1.0), "strictly inside"),
            (dict(n_informative_clinical=-1), "negative"),
            (dict(n_informative_clinical=99), "at most"),
            (dict(n_informative_gait=99), "at most"),
            (dict(n_informative_clinical=0, n_informative_gait=0), "at least one"),
        ],
    )
    def test_invalid_specs(self, kwargs, match):
        with pytest.raises(SynthSpecError, match=match):
            SynthSpec(**kwargs)


class TestPlantedTruth:
    def test_names_come_from_the_pools_in_order(self):
        spec = SynthSpec(n_informative_clinical=2, n_informative_gait=2)
        names = [name for name, _ in planted_truth(spec)]
        assert names == list(
            CLINICAL_INFORMATIVE_POOL[:2] + DEVICE_INFORMATIVE_POOL[:2]
        )

    def test_weights_split_signal_variance_evenly(self):
        spec = SynthSpec(n_informative_clinical=3, target_r2=0.5)
        weights = [w for _, w in planted_truth(spec)]
        total = sum(w * w for w in weights)
        assert total == pytest.approx(0.5 * PCT_TOTAL_SD**2, rel=1e-12)
        assert len({abs(w) for w in weights}) == 1
        assert [w > 0 for w in weights] == [True, False, True]


class TestGenerateCohort:
    def test_shape_contract(self, tiny_cohort, tiny_spec):
        assert len(tiny_cohort.subjects) == tiny_spec.n_subjects
        assert len(tiny_cohort.clinical_measure_names) == N_CLINICAL_MEASURES
        assert len(tiny_cohort.device_measure_names) == N_DEVICE_MEASURES
        assert len(tiny_cohort.lateral_pairs) == N_LATERAL_PAIRS
        for subject in tiny_cohort.subjects:
            assert tuple(v.month for v in subject.visits) == SCHEDULED_MONTHS
            assert set(subject.clinical) == set(tiny_cohort.clinical_measure_names)
            for visit in subject.visits:
                assert visit.run_numbers == RUN_NUMBERS
                assert visit.runs.shape == (len(RUN_NUMBERS), N_DEVICE_MEASURES)
                assert np.all(np.isfinite(visit.runs))
                assert 0.0 <= visit.part3_total <= 132.0

    def test_identical_specs_are_bit_identical(self, tiny_spec, tiny_cohort):
        again = generate_cohort(tiny_spec)
        for a, b in zip(tiny_cohort.subjects, again.subjects):
            assert a.id == b.id
            assert a.clinical == b.clinical
            for va, vb in zip(a.visits, b.visits):
                assert va.part3_total == vb.part3_total
                np.testing.assert_array_equal(va.runs, vb.runs)

    def test_seed_changes_the_draw(self, tiny_spec, tiny_cohort):
        other = generate_cohort(SynthSpec(n_subjects=12, seed=4))
        assert (
            tiny_cohort.subjects[0].clinical["moca_total"]
            != other.subjects[0].clinical["moca_total"]
        )

    def test_lateral_columns_bounded_away_from_zero(self, tiny_cohort):
        n_lat = 2 * N_LATERAL_PAIRS
        for subject in tiny_cohort.subjects:
            for visit in subject.visits:
                assert np.all(visit.runs[:, :n_lat] >= 0.1)

    def test_pair_names_interleave_then_singles(self, tiny_cohort):
        names = tiny_cohort.device_measure_names
        for left, right in tiny_cohort.lateral_pairs:
            assert left.endswith("_left") and right.endswith("_right")
            assert names.index(right) == names.index(left) + 1

    def test_planted_r2_is_recovered_by_regression(self):
        """Least squares on the informative columns must see ~target_r2.

        The outcome is linear in the informative latents by construction and
        each clinical column is an affine map of its latent, so ordinary
        least squares is an independent read of the planted signal strength.
        """
        spec = SynthSpec(n_subjects=400, target_r2=0.5, seed=21)
        cohort = generate_cohort(spec)
        ids, y = compute_targets(cohort, TargetKind.PCT_CHANGE_24)
        by_id = {s.id: s for s in cohort.subjects}
        names = [name for name, _ in planted_truth(spec)]
        X = np.array([[by_id[i].clinical[m] for m in names] for i in ids])
        A = np.column_stack([np.ones(len(ids)), X])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        r2_hat = 1.0 - resid @ resid / ((y - y.mean()) @ (y - y.mean()))
        assert abs(r2_hat - 0.5) < 0.08

    def test_gait_signal_lands_in_device_columns(self):
        spec = SynthSpec(
            n_subjects=400,
            n_informative_clinical=0,
            n_informative_gait=3,
            target_r2=0.5,
            seed=22,
        )
        cohort = generate_cohort(spec)
        ids, y = compute_targets(cohort, TargetKind.PCT_CHANGE_24)
        by_id = {s.id: s for s in cohort.subjects}
        cols = [
            cohort.device_measure_names.index(name)
            for name, _ in planted_truth(spec)
        ]
        X = np.array(
            [
                [np.median(by_id[i].visits[0].runs[:, c]) for c in cols]
                for i in ids
            ]
        )
        A = np.column_stack([np.ones(len(ids)), X])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        r2_hat = 1.0 - resid @ resid / ((y - y.mean()) @ (y - y.mean()))
        assert abs(r2_hat - 0.5) < 0.08

    def test_fast_progressor_fraction_is_usable(self):
        cohort = generate_cohort(SynthSpec(n_subjects=400, seed=23))
        _, y = compute_targets(cohort, TargetKind.PCT_CHANGE_24)
        frac = np.mean([label_fast_progressor(v) for v in y])
        assert 0.25 < frac < 0.55

    def test_mean_pct_change_matches_requested_moments(self):
        cohort = generate_cohort(SynthSpec(n_subjects=400, seed=24))
        _, y = compute_targets(cohort, TargetKind.PCT_CHANGE_24)
        assert abs(np.mean(y) - 0.1375) < 0.04

    def test_planted_correlated_pairs_exceed_prune_threshold(self):
        cohort = generate_cohort(SynthSpec(n_subjects=400, seed=25))
        a = np.array([s.clinical["stai_state_total"] for s in cohort.subjects])
        b = np.array([s.clinical["stai_trait_total"] for s in cohort.subjects])
        assert np.corrcoef(a, b)[0, 1] > 0.8


class TestRandomizeTargets:
    def test_features_stay_scores_move(self, tiny_cohort):
        shuffled = randomize_targets(tiny_cohort, seed=1)
        for orig, perm in zip(tiny_cohort.subjects, shuffled.subjects):
            assert orig.id == perm.id
            assert orig.clinical == perm.clinical
            for vo, vp in zip(orig.visits, perm.visits):
                np.testing.assert_array_equal(vo.runs, vp.runs)
        orig_scores = sorted(
            v.part3_total for s in tiny_cohort.subjects for v in s.visits
        )
        perm_scores = sorted(
            v.part3_total for s in shuffled.subjects for v in s.visits
        )
        assert orig_scores == perm_scores
        assert any(
            o.visits[0].part3_total != p.visits[0].part3_total
            for o, p in zip(tiny_cohort.subjects, shuffled.subjects)
        )

    def test_trajectories_move_as_blocks(self, tiny_cohort):
        shuffled = randomize_targets(tiny_cohort, seed=1)
        originals = {
            tuple(v.part3_total for v in s.visits) for s in tiny_cohort.subjects
        }
        for subject in shuffled.subjects:
            assert tuple(v.part3_total for v in subject.visits) in originals

    def test_deterministic_per_seed(self, tiny_cohort):
        a = randomize_targets(tiny_cohort, seed=2)
        b = randomize_targets(tiny_cohort, seed=2)
        c = randomize_targets(tiny_cohort, seed=3)
        score = lambda cohort: [
            v.part3_total for s in cohort.subjects for v in s.visits
        ]
        assert score(a) == score(b)
        assert score(a) != score(c)

    def test_needs_two_subjects(self, tiny_cohort):
        from dataclasses import replace

        lone = replace(tiny_cohort, subjects=tiny_cohort.subjects[:1])
        with pytest.raises(CohortError, match="at least 2"):
            randomize_targets(lone)
