"""Feature engineering from visit-level device medians and clinical measures.

Seven feature sets are built from a cohort, all derived from per-visit
medians over the repeated test runs:

- ``baseline_gait``: the 148 device measures at month 0
- ``delta_gait``: month-6 minus month-0 change of each measure (148)
- ``baseline_asymmetry``: 1 - left/right for the 22 paired measures at month 0
- ``delta_asymmetry``: the same asymmetry applied to the month-6 minus
  month-0 deltas of the paired measures (22)
- ``all_gait``: the four gait blocks concatenated (340)
- ``clinical``: the 40 baseline clinical measures
- ``gait_clinical``: all gait plus clinical (380)

Sets that use month-6 data keep only subjects with both a month-0 and a
month-6 visit.

Fold-local preprocessing lives here too: train-median imputation, greedy
pruning of pairwise-correlated columns (|r| > 0.8, first column wins), and
z-scoring. Each fitted transform records what it learned on a
:class:`Provenance` so the exact same mapping can be replayed on new rows,
and so tests can check that nothing about the transform depended on held-out
rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

CORRELATION_PRUNE_THRESHOLD = 0.8


class FeatureSetId(Enum):
    BASELINE_GAIT = "baseline_gait"
    DELTA_GAIT = "delta_gait"
    BASELINE_ASYMMETRY = "baseline_asymmetry"
    DELTA_ASYMMETRY = "delta_asymmetry"
    ALL_GAIT = "all_gait"
    CLINICAL = "clinical"
    GAIT_AND_CLINICAL = "gait_clinical"

    @classmethod
    def from_string(cls, value: str) -> "FeatureSetId":
        for member in cls:
            if member.value == value:
                return member
        known = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown feature set {value!r} (expected one of: {known})")


ALL_FEATURE_SETS = tuple(FeatureSetId)

# Months a subject must have visited to appear in a set's matrix. Any set
# containing month-6 deltas needs both ends of the interval.
_REQUIRED_MONTHS = {
    FeatureSetId.BASELINE_GAIT: (0,),
    FeatureSetId.DELTA_GAIT: (0, 6),
    FeatureSetId.BASELINE_ASYMMETRY: (0,),
    FeatureSetId.DELTA_ASYMMETRY: (0, 6),
    FeatureSetId.ALL_GAIT: (0, 6),
    FeatureSetId.CLINICAL: (),
    FeatureSetId.GAIT_AND_CLINICAL: (0, 6),
}


@dataclass(frozen=True)
class Provenance:
    """Everything a fitted preprocessing pipeline learned, keyed by name.

    ``imputation_medians`` covers the pre-prune column set;
    ``standardize_mean``/``standardize_sd`` cover the post-prune columns.
    """

    feature_set: str | None = None
    train_subject_ids: tuple[str, ...] | None = None
    imputation_medians: dict[str, float] | None = None
    dropped_columns: tuple[str, ...] | None = None
    standardize_mean: dict[str, float] | None = None
    standardize_sd: dict[str, float] | None = None

    def to_dict(self) -> dict:
        return {
            "feature_set": self.feature_set,
            "train_subject_ids": list(self.train_subject_ids or []),
            "imputation_medians": dict(self.imputation_medians or {}),
            "dropped_columns": list(self.dropped_columns or []),
            "standardize_mean": (
                None if self.standardize_mean is None else dict(self.standardize_mean)
            ),
            "standardize_sd": (
                None if self.standardize_sd is None else dict(self.standardize_sd)
            ),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Provenance":
        return cls(
            feature_set=payload.get("feature_set"),
            train_subject_ids=tuple(payload.get("train_subject_ids") or ()),
            imputation_medians=dict(payload.get("imputation_medians") or {}),
            dropped_columns=tuple(payload.get("dropped_columns") or ()),
            standardize_mean=(
                None
                if payload.get("standardize_mean") is None
                else dict(payload["standardize_mean"])
            ),
            standardize_sd=(
                None
                if payload.get("standardize_sd") is None
                else dict(payload["standardize_sd"])
            ),
        )


@dataclass(frozen=True)
class FeatureMatrix:
    subject_ids: tuple[str, ...]
    column_names: tuple[str, ...]
    values: np.ndarray = field(repr=False)
    provenance: Provenance = field(default_factory=Provenance)

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_features(self) -> int:
        return len(self.column_names)

    def column_index(self, name: str) -> int:
        return self.column_names.index(name)


def asymmetry(left: float, right: float) -> float:
    """Lateral asymmetry 1 - left/right; NaN when the right side is zero."""
    if right == 0.0:
        return float("nan")
    return 1.0 - left / right


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson_r expects two equal-length vectors")
    if x.size < 2:
        raise ValueError("pearson_r needs at least two observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("pearson_r undefined for a constant vector")
    return float((dx @ dy) / (sx * sy))


def _visit_medians(subject, month: int, n_measures: int) -> np.ndarray:
    """Per-measure medians over a visit's runs; all-NaN where the visit is absent."""
    v = subject.visit(month)
    if v is None or v.runs.shape[0] == 0:
        return np.full(n_measures, np.nan)
    with np.errstate(all="ignore"):
        return np.nanmedian(v.runs, axis=0)


def _vector_asymmetry(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 1.0 - left / right
    out = np.where(right == 0.0, np.nan, out)
    return out


def build_feature_set(cohort, set_id: FeatureSetId) -> FeatureMatrix:
    """Assemble one feature matrix from the cohort.

    Rows follow cohort order, restricted to subjects with the months the set
    needs. Values may contain NaN (missing measurements); imputation is a
    fold-local concern, not done here.
    """
    device_names = cohort.device_measure_names
    n_dev = len(device_names)
    name_to_idx = {n: i for i, n in enumerate(device_names)}
    left_idx = np.array(
        [name_to_idx[l] for l, _ in cohort.lateral_pairs], dtype=np.intp
    )
    right_idx = np.array(
        [name_to_idx[r] for _, r in cohort.lateral_pairs], dtype=np.intp
    )
    pair_bases = tuple(l[: -len("_left")] for l, _ in cohort.lateral_pairs)

    required = _REQUIRED_MONTHS[set_id]
    subjects = [
        s
        for s in cohort.subjects
        if all(s.visit(m) is not None for m in required)
    ]

    def gait_blocks(subject):
        med0 = _visit_medians(subject, 0, n_dev)
        base = med0
        asy_base = _vector_asymmetry(med0[left_idx], med0[right_idx])
        if 6 in required:
            med6 = _visit_medians(subject, 6, n_dev)
            delta = med6 - med0
            asy_delta = _vector_asymmetry(delta[left_idx], delta[right_idx])
        else:
            delta = asy_delta = None
        return base, delta, asy_base, asy_delta

    delta_names = tuple(n + "_delta" for n in device_names)
    asy_base_names = tuple(b + "_asym" for b in pair_bases)
    asy_delta_names = tuple(b + "_delta_asym" for b in pair_bases)
    clinical_names = cohort.clinical_measure_names

    rows = []
    if set_id is FeatureSetId.BASELINE_GAIT:
        columns = device_names
        for s in subjects:
            rows.append(gait_blocks(s)[0])
    elif set_id is FeatureSetId.DELTA_GAIT:
        columns = delta_names
        for s in subjects:
            rows.append(gait_blocks(s)[1])
    elif set_id is FeatureSetId.BASELINE_ASYMMETRY:
        columns = asy_base_names
        for s in subjects:
            rows.append(gait_blocks(s)[2])
    elif set_id is FeatureSetId.DELTA_ASYMMETRY:
        columns = asy_delta_names
        for s in subjects:
            rows.append(gait_blocks(s)[3])
    elif set_id is FeatureSetId.ALL_GAIT:
        columns = device_names + delta_names + asy_base_names + asy_delta_names
        for s in subjects:
            base, delta, asy_base, asy_delta = gait_blocks(s)
            rows.append(np.concatenate([base, delta, asy_base, asy_delta]))
    elif set_id is FeatureSetId.CLINICAL:
        columns = clinical_names
        for s in subjects:
            rows.append(
                np.array([s.clinical[n] for n in clinical_names], dtype=np.float64)
            )
    elif set_id is FeatureSetId.GAIT_AND_CLINICAL:
        columns = (
            device_names + delta_names + asy_base_names + asy_delta_names
            + clinical_names
        )
        for s in subjects:
            base, delta, asy_base, asy_delta = gait_blocks(s)
            clin = np.array(
                [s.clinical[n] for n in clinical_names], dtype=np.float64
            )
            rows.append(np.concatenate([base, delta, asy_base, asy_delta, clin]))
    else:
        raise ValueError(f"unhandled feature set {set_id!r}")

    values = (
        np.stack(rows).astype(np.float64)
        if rows
        else np.empty((0, len(columns)), dtype=np.float64)
    )
    return FeatureMatrix(
        subject_ids=tuple(s.id for s in subjects),
        column_names=tuple(columns),
        values=values,
        provenance=Provenance(feature_set=set_id.value),
    )


def impute_train_median(matrix: FeatureMatrix, train_idx) -> FeatureMatrix:
    """Fill NaNs with per-column medians computed on the training rows only.

    A column that is all-NaN on the training rows gets median 0.0.
    """
    train_idx = np.asarray(train_idx, dtype=np.intp)
    with np.errstate(all="ignore"):
        medians = np.nanmedian(matrix.values[train_idx], axis=0)
    medians = np.where(np.isfinite(medians), medians, 0.0)
    values = matrix.values.copy()
    nan_mask = ~np.isfinite(values)
    values[nan_mask] = np.broadcast_to(medians, values.shape)[nan_mask]
    prov = replace(
        matrix.provenance,
        train_subject_ids=tuple(matrix.subject_ids[i] for i in train_idx),
        imputation_medians={
            name: float(m) for name, m in zip(matrix.column_names, medians)
        },
    )
    return FeatureMatrix(matrix.subject_ids, matrix.column_names, values, prov)


def _abs_correlation(values: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        corr = np.corrcoef(values, rowvar=False)
    corr = np.atleast_2d(corr)
    corr[~np.isfinite(corr)] = 0.0  # constant columns correlate with nothing
    return np.abs(corr)


def prune_correlated(
    matrix: FeatureMatrix,
    train_idx,
    threshold: float = CORRELATION_PRUNE_THRESHOLD,
) -> FeatureMatrix:
    """Drop columns too correlated (|r| > threshold) with an earlier kept one.

    Greedy in column order: a column survives only if its absolute Pearson
    correlation with every already-kept column is at or below the threshold,
    measured on the training rows. Applying the op twice changes nothing.
    """
    train_idx = np.asarray(train_idx, dtype=np.intp)
    abs_corr = _abs_correlation(matrix.values[train_idx])
    kept: list[int] = []
    for j in range(matrix.n_features):
        if not kept or not np.any(abs_corr[np.asarray(kept), j] > threshold):
            kept.append(j)
    kept_arr = np.asarray(kept, dtype=np.intp)
    dropped = tuple(
        name for i, name in enumerate(matrix.column_names) if i not in set(kept)
    )
    prov = replace(matrix.provenance, dropped_columns=dropped)
    return FeatureMatrix(
        matrix.subject_ids,
        tuple(matrix.column_names[i] for i in kept),
        matrix.values[:, kept_arr].copy(),
        prov,
    )


def fit_standardize(matrix: FeatureMatrix, train_idx) -> FeatureMatrix:
    """Z-score every column with training-row mean and population sd.

    Zero-sd columns carry no information on the training rows and map to all
    zeros, held-out rows included.
    """
    train_idx = np.asarray(train_idx, dtype=np.intp)
    train = matrix.values[train_idx]
    mean = train.mean(axis=0)
    sd = train.std(axis=0)
    scale = np.where(sd > 0.0, 1.0 / np.where(sd > 0.0, sd, 1.0), 0.0)
    values = (matrix.values - mean) * scale
    prov = replace(
        matrix.provenance,
        standardize_mean={
            n: float(m) for n, m in zip(matrix.column_names, mean)
        },
        standardize_sd={n: float(s) for n, s in zip(matrix.column_names, sd)},
    )
    return FeatureMatrix(matrix.subject_ids, matrix.column_names, values, prov)


def prepare_fold(
    matrix: FeatureMatrix,
    train_idx,
    standardize: bool,
    threshold: float = CORRELATION_PRUNE_THRESHOLD,
) -> FeatureMatrix:
    """Fit the fold pipeline on training rows and apply it to every row.

    Order: impute (train medians), prune correlated columns (train
    correlations), then optionally z-score (train moments). All statistics
    come from ``train_idx`` rows; other rows are passengers.
    """
    out = impute_train_median(matrix, train_idx)
    out = prune_correlated(out, train_idx, threshold)
    if standardize:
        out = fit_standardize(out, train_idx)
    return out


def apply_transforms(matrix: FeatureMatrix, provenance: Provenance) -> FeatureMatrix:
    """Replay a previously fitted pipeline on a freshly built matrix.

    Used when a stored model is brought back to score new rows: imputation
    medians, the dropped-column list and standardization moments all come
    from the provenance rather than being refit.
    """
    medians = provenance.imputation_medians or {}
    missing = [n for n in matrix.column_names if n not in medians]
    if missing:
        raise ValueError(
            f"provenance lacks imputation medians for {len(missing)} columns "
            f"(first: {missing[0]!r})"
        )
    fill = np.array([medians[n] for n in matrix.column_names], dtype=np.float64)
    values = matrix.values.copy()
    mask = ~np.isfinite(values)
    values[mask] = np.broadcast_to(fill, values.shape)[mask]

    dropped = set(provenance.dropped_columns or ())
    kept = [i for i, n in enumerate(matrix.column_names) if n not in dropped]
    names = tuple(matrix.column_names[i] for i in kept)
    values = values[:, kept]

    if provenance.standardize_mean is not None:
        mean = np.array(
            [provenance.standardize_mean[n] for n in names], dtype=np.float64
        )
        sd = np.array(
            [provenance.standardize_sd[n] for n in names], dtype=np.float64
        )
        scale = np.where(sd > 0.0, 1.0 / np.where(sd > 0.0, sd, 1.0), 0.0)
        values = (values - mean) * scale

    return FeatureMatrix(matrix.subject_ids, names, values, provenance)
