"""Evaluation metrics: R^2, fast-progressor PPV, permutation importance,
and the paired t-test used for the progression summary.

The t-test p-value goes through the regularized incomplete beta function,
p = I_x(df/2, 1/2) with x = df/(df + t^2), which is the exact two-sided tail
of the t distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .cohort import FAST_PROGRESSOR_THRESHOLD
from .seeding import derive_seed


def r2(y_true, y_pred) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("r2 expects two equal-length vectors")
    if y_true.size < 2:
        raise ValueError("r2 needs at least two observations")
    resid = y_true - y_pred
    total = y_true - y_true.mean()
    ss_tot = float(total @ total)
    if ss_tot == 0.0:
        raise ValueError("r2 undefined for a constant target")
    return 1.0 - float(resid @ resid) / ss_tot


def classify_fast_from_regression(pct_change_pred, threshold: float = FAST_PROGRESSOR_THRESHOLD):
    """Turn predicted percent changes into fast-progressor calls (>= threshold)."""
    return np.asarray(pct_change_pred, dtype=np.float64) >= threshold


def ppv(predicted, actual) -> float | None:
    """TP / (TP + FP); None when nothing was predicted positive.

    An undefined PPV is reported as not-applicable rather than 0 so that a
    model which never calls anyone a fast progressor is distinguishable from
    one that is always wrong.
    """
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    if predicted.shape != actual.shape:
        raise ValueError("predicted and actual labels must align")
    n_pos = int(predicted.sum())
    if n_pos == 0:
        return None
    tp = int((predicted & actual).sum())
    return tp / n_pos


@dataclass(frozen=True)
class ImportanceReport:
    """Permutation importances: mean and sd of the R^2 drop per feature."""

    feature_names: tuple[str, ...]
    baseline_r2: float
    mean_drop: np.ndarray = field(repr=False)
    sd_drop: np.ndarray = field(repr=False)
    n_repeats: int = 0
    seed: int = 0

    def ranking(self) -> list[tuple[str, float, float]]:
        """(name, mean drop, sd) sorted by mean drop descending, stable."""
        order = np.argsort(-self.mean_drop, kind="stable")
        return [
            (self.feature_names[i], float(self.mean_drop[i]), float(self.sd_drop[i]))
            for i in order
        ]

    def top(self, k: int) -> list[tuple[str, float, float]]:
        return self.ranking()[:k]


def _resolve_predict(model):
    if callable(model):
        return model
    predict = getattr(model, "predict", None)
    if callable(predict):
        return predict
    raise TypeError("model must be callable or expose a predict(X) method")


def permutation_importance(
    model,
    X_test,
    y_test,
    n_repeats: int = 100,
    seed: int = 0,
    feature_names=None,
) -> ImportanceReport:
    """Mean R^2 drop when one column is shuffled, over ``n_repeats`` shuffles.

    Each feature gets its own generator derived from (seed, column index), so
    importances do not depend on evaluation order. ``model`` is anything with
    a ``predict(X)`` method, or a bare callable.
    """
    predict = _resolve_predict(model)
    X_test = np.asarray(X_test, dtype=np.float64)
    y_test = np.asarray(y_test, dtype=np.float64)
    if n_repeats < 1:
        raise ValueError("n_repeats must be positive")
    n, d = X_test.shape
    if feature_names is not None and len(feature_names) != d:
        raise ValueError("feature_names must match the number of columns")
    baseline = r2(y_test, np.asarray(predict(X_test), dtype=np.float64))
    mean_drop = np.empty(d)
    sd_drop = np.empty(d)
    for j in range(d):
        rng = np.random.default_rng(derive_seed(seed, "permutation", j))
        drops = np.empty(n_repeats)
        X_perm = X_test.copy()
        for rep in range(n_repeats):
            X_perm[:, j] = X_test[rng.permutation(n), j]
            permuted = r2(
                y_test, np.asarray(predict(X_perm), dtype=np.float64)
            )
            drops[rep] = baseline - permuted
        mean_drop[j] = drops.mean()
        sd_drop[j] = drops.std()
    names = (
        tuple(feature_names)
        if feature_names is not None
        else tuple(f"feature_{j}" for j in range(d))
    )
    return ImportanceReport(
        feature_names=names,
        baseline_r2=baseline,
        mean_drop=mean_drop,
        sd_drop=sd_drop,
        n_repeats=n_repeats,
        seed=seed,
    )


def paired_t_test(a, b) -> tuple[float, float]:
    """Two-sided paired t-test; returns (t, p) with df = n - 1.

    t = mean(d) / (sd(d, ddof=1) / sqrt(n)) for d = a - b. Identical samples
    give (0, 1). Differences that are all equal but nonzero have zero
    variance and no finite t; that degenerate signal is an error.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired_t_test expects two equal-length vectors")
    n = a.size
    if n < 2:
        raise ValueError("paired_t_test needs at least two pairs")
    d = a - b
    if np.all(d == 0.0):
        return 0.0, 1.0
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise ValueError("paired_t_test: differences have zero variance")
    t = float(d.mean()) / (sd / np.sqrt(n))
    df = n - 1
    x = df / (df + t * t)
    p = float(betainc(df / 2.0, 0.5, x))
    return float(t), p
