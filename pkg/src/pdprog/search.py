"""Nested cross-validated random hyperparameter search.

Two model families (boosted trees, feedforward nets) are searched over
sampled configurations: 3 outer folds estimate generalization, 3 inner folds
per outer fold pick the configuration, and the winner is refit on the full
outer-train split before scoring the untouched outer-test rows. Folds are
stratified on the continuous target by quantile binning.

Every random decision flows from one master seed through ``seeding``:
fold assignment, the configuration draw for each outer fold, and a per-trial
seed for network initialization/shuffling. Trials are pure functions of
(data, config, derived seed) and results are reduced by trial index, so a
run is bit-identical whatever the worker count or scheduling order.
"""

from __future__ import annotations

import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .cohort import Cohort, TargetKind, compute_targets
from .featureset import (
    FeatureMatrix,
    FeatureSetId,
    Provenance,
    build_feature_set,
    prepare_fold,
)
from .gbt import GbtConfig, fit_gbt, predict_gbt
from .metrics import r2
from .nnet import ACTIVATIONS, NetConfig, predict_net, train_net, warm_train_kernels
from .seeding import derive_seed, rng_for

DEFAULT_K_OUTER = 3
DEFAULT_K_INNER = 3
DEFAULT_N_BINS = 5


class ModelFamily(Enum):
    TREES = "trees"
    NET = "net"

    @classmethod
    def from_string(cls, value) -> "ModelFamily":
        if isinstance(value, cls):
            return value
        for fam in cls:
            if fam.value == value:
                return fam
        known = ", ".join(f.value for f in cls)
        raise ValueError(f"unknown model family {value!r} (expected: {known})")


@dataclass(frozen=True)
class TreesSearchSpace:
    """Sampling ranges for the boosted-tree family.

    Counts are uniform inclusive integers; the regularization terms and the
    learning rate span orders of magnitude and are sampled log-uniformly.
    """

    n_estimators: tuple[int, int] = (10, 1000)
    max_depth: tuple[int, int] = (5, 50)
    l1: tuple[float, float] = (1e-3, 1.0)
    l2: tuple[float, float] = (1e-3, 1.0)
    learning_rate: tuple[float, float] = (1e-4, 0.4)
    n_configs: int = 1000


@dataclass(frozen=True)
class NetSearchSpace:
    """Sampling ranges for the network family.

    Width choices are the eight multiples of 16 up to 128; tapering is a
    fair coin and, when on, shrinks successive layers by one of two factors.
    ``epochs``/``batch_size`` are not searched, they are carried onto every
    sampled config.
    """

    n_layers: tuple[int, int] = (1, 5)
    widths: tuple[int, ...] = (16, 32, 48, 64, 80, 96, 112, 128)
    taper_probability: float = 0.5
    taper_sizes: tuple[float, ...] = (0.2, 0.5)
    dropout: tuple[float, float] = (0.1, 0.9)
    activations: tuple[str, ...] = ACTIVATIONS
    learning_rate: tuple[float, float] = (1e-4, 5e-3)
    n_configs: int = 300
    epochs: int = 200
    batch_size: int = 16


def default_space(family: ModelFamily):
    family = ModelFamily.from_string(family)
    if family is ModelFamily.TREES:
        return TreesSearchSpace()
    return NetSearchSpace()


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def sample_config(space, rng: np.random.Generator):
    """Draw one configuration; the draw order is fixed so that a given rng
    state always yields the same config regardless of caller."""
    if isinstance(space, TreesSearchSpace):
        return GbtConfig(
            n_estimators=int(rng.integers(space.n_estimators[0], space.n_estimators[1] + 1)),
            max_depth=int(rng.integers(space.max_depth[0], space.max_depth[1] + 1)),
            l1=_log_uniform(rng, space.l1[0], space.l1[1]),
            l2=_log_uniform(rng, space.l2[0], space.l2[1]),
            learning_rate=_log_uniform(rng, space.learning_rate[0], space.learning_rate[1]),
        )
    if isinstance(space, NetSearchSpace):
        n_layers = int(rng.integers(space.n_layers[0], space.n_layers[1] + 1))
        base_width = int(space.widths[int(rng.integers(0, len(space.widths)))])
        taper = bool(rng.random() < space.taper_probability)
        # taper_size is drawn even when taper is off, keeping the stream
        # aligned so configs after a non-tapered one do not shift
        taper_size = float(space.taper_sizes[int(rng.integers(0, len(space.taper_sizes)))])
        dropout = float(rng.uniform(space.dropout[0], space.dropout[1]))
        activation = str(space.activations[int(rng.integers(0, len(space.activations)))])
        lr = _log_uniform(rng, space.learning_rate[0], space.learning_rate[1])
        return NetConfig(
            n_layers=n_layers,
            base_width=base_width,
            taper=taper,
            taper_size=taper_size,
            dropout_rate=dropout,
            activation=activation,
            learning_rate=lr,
            epochs=space.epochs,
            batch_size=space.batch_size,
        )
    raise TypeError(f"unknown search space {type(space).__name__}")


def stratified_folds(y, k: int, n_bins: int = DEFAULT_N_BINS, seed: int = 0):
    """Partition indices into k folds balanced across target quantile bins.

    y is quantile-binned; within each bin the indices are shuffled and dealt
    round-robin, with the dealing position carried across bins so fold sizes
    stay within one of each other. Returns sorted index arrays.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if k < 2:
        raise ValueError("need at least 2 folds")
    if k > n:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    inner = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    edges = np.unique(np.quantile(y, inner))
    bins = np.searchsorted(edges, y, side="left")

    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    pos = 0
    for b in range(len(edges) + 1):
        members = np.flatnonzero(bins == b)
        if members.size == 0:
            continue
        members = members[rng.permutation(members.size)]
        for idx in members:
            folds[pos % k].append(int(idx))
            pos += 1
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


@dataclass(frozen=True)
class Trial:
    index: int
    config_index: int
    inner_fold: int
    seed: int
    score: float | None
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "index": self.index,
            "config_index": self.config_index,
            "inner_fold": self.inner_fold,
            "score": self.score,
            "error": self.error,
        }


@dataclass
class FoldResult:
    fold_index: int
    test_indices: np.ndarray
    trials: list[Trial]
    config_means: list[float]
    selected_index: int | None
    selected_config: object | None
    test_r2: float | None
    test_predictions: np.ndarray | None
    provenance: Provenance | None = None
    model: object = None
    failed: bool = False
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "fold_index": self.fold_index,
            "test_indices": [int(i) for i in self.test_indices],
            "trials": [t.to_json_dict() for t in self.trials],
            "selected_index": self.selected_index,
            "selected_config": (
                None if self.selected_config is None else self.selected_config.to_dict()
            ),
            "test_r2": self.test_r2,
            "test_predictions": (
                None
                if self.test_predictions is None
                else [float(v) for v in self.test_predictions]
            ),
            "failed": self.failed,
            "error": self.error,
        }


@dataclass
class NestedCvResult:
    family: ModelFamily
    folds: list[FoldResult]
    mean_test_r2: float | None
    std_test_r2: float | None
    partial: bool
    n_failed_trials: int

    def to_json_dict(self) -> dict:
        return {
            "family": self.family.value,
            "mean_test_r2": self.mean_test_r2,
            "std_test_r2": self.std_test_r2,
            "partial": self.partial,
            "n_failed_trials": self.n_failed_trials,
            "folds": [f.to_json_dict() for f in self.folds],
        }


def _as_matrix(X) -> FeatureMatrix:
    if isinstance(X, FeatureMatrix):
        return X
    values = np.asarray(X, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("X must be a FeatureMatrix or a 2-D array")
    return FeatureMatrix(
        subject_ids=tuple(f"row{i}" for i in range(values.shape[0])),
        column_names=tuple(f"x{j}" for j in range(values.shape[1])),
        values=values,
    )


def _seeded_config(config, seed: int):
    return replace(config, seed=seed)


def _fit_and_score(family, config, X_tr, y_tr, X_va, y_va):
    if family is ModelFamily.TREES:
        model = fit_gbt(X_tr, y_tr, config)
        preds = predict_gbt(model, X_va)
    else:
        model = train_net(X_tr, y_tr, config)
        preds = predict_net(model, X_va)
    return float(r2(y_va, preds))


# per-process state for trial workers; populated by the pool initializer so
# forked workers inherit the fold data without per-task pickling
_WORKER_STATE: dict | None = None


def _init_worker(state: dict) -> None:
    global _WORKER_STATE
    _WORKER_STATE = state


def _run_trial(state: dict, trial_index: int) -> tuple[float | None, str | None]:
    k_inner = state["k_inner"]
    config_index, fold_index = divmod(trial_index, k_inner)
    X_tr, y_tr, X_va, y_va = state["fold_data"][fold_index]
    config = _seeded_config(
        state["configs"][config_index], state["trial_seeds"][trial_index]
    )
    try:
        score = _fit_and_score(state["family"], config, X_tr, y_tr, X_va, y_va)
    except Exception as exc:  # a failed trial ranks below every finished one
        return None, f"{type(exc).__name__}: {exc}"
    if not np.isfinite(score):
        return None, "non-finite score"
    return score, None


def _pool_trial(trial_index: int):
    return _run_trial(_WORKER_STATE, trial_index)


def _run_trials(state: dict, n_trials: int, workers: int):
    if workers <= 1:
        return [_run_trial(state, t) for t in range(n_trials)]
    try:
        ctx = mp.get_context("fork")
    except ValueError:  # platforms without fork pickle the state instead
        ctx = mp.get_context()
    chunk = max(1, n_trials // (workers * 4))
    with ProcessPoolExecutor(
        max_workers=workers,
        mp_context=ctx,
        initializer=_init_worker,
        initargs=(state,),
    ) as pool:
        return list(pool.map(_pool_trial, range(n_trials), chunksize=chunk))


_GBT_WARMED = False


def _warm_gbt() -> None:
    # compile/load the tree kernels once in the parent so forked workers
    # inherit them instead of each paying the cache load
    global _GBT_WARMED
    if not _GBT_WARMED:
        tiny = np.array([[0.0], [1.0], [2.0], [3.0]])
        fit_gbt(
            tiny,
            tiny[:, 0],
            GbtConfig(n_estimators=1, max_depth=1, l1=0.0, l2=0.0, learning_rate=0.5),
        )
        _GBT_WARMED = True


def nested_cv(
    X,
    y,
    family,
    space=None,
    seed: int = 0,
    *,
    k_outer: int = DEFAULT_K_OUTER,
    k_inner: int = DEFAULT_K_INNER,
    n_bins: int = DEFAULT_N_BINS,
    workers: int = 1,
    cell_id: str = "",
    keep_models: bool = False,
) -> NestedCvResult:
    """Search one (data, family) cell.

    Per outer fold: sample ``space.n_configs`` configs, score each on the
    inner folds (fit on inner-train, R² on inner-held-out), select the best
    inner mean (ties break to the lowest config index), refit it on the full
    outer-train split and score the outer test rows. Imputation, correlation
    pruning and (for nets) standardization are refit inside every split from
    its own training rows, never from held-out rows.
    """
    matrix = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (matrix.n_subjects,):
        raise ValueError("y must align with the matrix rows")
    family = ModelFamily.from_string(family)
    if space is None:
        space = default_space(family)
    standardize = family is ModelFamily.NET
    if family is ModelFamily.TREES:
        _warm_gbt()
    else:
        warm_train_kernels()

    n = matrix.n_subjects
    all_idx = np.arange(n)
    outer = stratified_folds(
        y, k_outer, n_bins, derive_seed(seed, cell_id, "outer-folds")
    )

    folds: list[FoldResult] = []
    n_failed = 0
    for j, test_idx in enumerate(outer):
        train_idx = np.setdiff1d(all_idx, test_idx)

        cfg_rng = rng_for(seed, cell_id, "configs", j)
        configs = [sample_config(space, cfg_rng) for _ in range(space.n_configs)]

        inner_rel = stratified_folds(
            y[train_idx], k_inner, n_bins, derive_seed(seed, cell_id, "inner-folds", j)
        )
        rel_all = np.arange(train_idx.size)
        fold_data = []
        for rel in inner_rel:
            tr = train_idx[np.setdiff1d(rel_all, rel)]
            va = train_idx[rel]
            prepared = prepare_fold(matrix, tr, standardize)
            fold_data.append(
                (prepared.values[tr], y[tr], prepared.values[va], y[va])
            )

        n_trials = len(configs) * k_inner
        trial_seeds = [
            derive_seed(seed, cell_id, "trial", j, t) for t in range(n_trials)
        ]
        state = {
            "family": family,
            "k_inner": k_inner,
            "configs": configs,
            "trial_seeds": trial_seeds,
            "fold_data": fold_data,
        }
        outcomes = _run_trials(state, n_trials, workers)

        trials = []
        for t, (score, err) in enumerate(outcomes):
            ci, fi = divmod(t, k_inner)
            trials.append(
                Trial(
                    index=t,
                    config_index=ci,
                    inner_fold=fi,
                    seed=trial_seeds[t],
                    score=score,
                    error=err,
                )
            )
            if score is None:
                n_failed += 1

        config_means = []
        for ci in range(len(configs)):
            scores = [trials[ci * k_inner + fi].score for fi in range(k_inner)]
            if any(s is None for s in scores):
                config_means.append(float("-inf"))
            else:
                config_means.append(float(np.mean(scores)))

        if not np.isfinite(max(config_means)):
            folds.append(
                FoldResult(
                    fold_index=j,
                    test_indices=test_idx,
                    trials=trials,
                    config_means=config_means,
                    selected_index=None,
                    selected_config=None,
                    test_r2=None,
                    test_predictions=None,
                    failed=True,
                    error="all trials failed",
                )
            )
            continue

        selected = int(np.argmax(config_means))  # first max wins ties
        refit_config = _seeded_config(
            configs[selected], derive_seed(seed, cell_id, "refit", j)
        )
        try:
            prepared = prepare_fold(matrix, train_idx, standardize)
            if family is ModelFamily.TREES:
                model = fit_gbt(prepared.values[train_idx], y[train_idx], refit_config)
                preds = predict_gbt(model, prepared.values[test_idx])
            else:
                model = train_net(
                    prepared.values[train_idx], y[train_idx], refit_config,
                    provenance=prepared.provenance,
                )
                preds = predict_net(model, prepared.values[test_idx])
            fold_r2 = float(r2(y[test_idx], preds))
        except Exception as exc:
            folds.append(
                FoldResult(
                    fold_index=j,
                    test_indices=test_idx,
                    trials=trials,
                    config_means=config_means,
                    selected_index=selected,
                    selected_config=refit_config,
                    test_r2=None,
                    test_predictions=None,
                    failed=True,
                    error=f"refit: {type(exc).__name__}: {exc}",
                )
            )
            continue

        folds.append(
            FoldResult(
                fold_index=j,
                test_indices=test_idx,
                trials=trials,
                config_means=config_means,
                selected_index=selected,
                selected_config=refit_config,
                test_r2=fold_r2,
                test_predictions=preds,
                provenance=prepared.provenance,
                model=model if keep_models else None,
            )
        )

    scores = [f.test_r2 for f in folds if not f.failed]
    partial = any(f.failed for f in folds)
    if scores:
        mean_r2 = float(np.mean(scores))
        std_r2 = float(np.std(scores))
    else:
        mean_r2 = None
        std_r2 = None
    return NestedCvResult(
        family=family,
        folds=folds,
        mean_test_r2=mean_r2,
        std_test_r2=std_r2,
        partial=partial,
        n_failed_trials=n_failed,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment request, JSON round-trippable for the CLI."""

    feature_sets: tuple[str, ...] = tuple(s.value for s in FeatureSetId)
    targets: tuple[str, ...] = tuple(t.value for t in TargetKind)
    families: tuple[str, ...] = tuple(f.value for f in ModelFamily)
    trees_n_configs: int | None = None
    net_n_configs: int | None = None
    seed: int = 0
    workers: int = 1
    fast_threshold: float = 0.2
    net_epochs: int = 200
    net_batch_size: int = 16

    def spaces(self) -> dict:
        trees = TreesSearchSpace()
        if self.trees_n_configs is not None:
            trees = replace(trees, n_configs=int(self.trees_n_configs))
        net = NetSearchSpace(
            epochs=self.net_epochs, batch_size=self.net_batch_size
        )
        if self.net_n_configs is not None:
            net = replace(net, n_configs=int(self.net_n_configs))
        return {ModelFamily.TREES: trees, ModelFamily.NET: net}

    def to_json_dict(self) -> dict:
        return {
            "feature_sets": list(self.feature_sets),
            "targets": list(self.targets),
            "families": list(self.families),
            "trees_n_configs": self.trees_n_configs,
            "net_n_configs": self.net_n_configs,
            "seed": self.seed,
            "workers": self.workers,
            "fast_threshold": self.fast_threshold,
            "net_epochs": self.net_epochs,
            "net_batch_size": self.net_batch_size,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ExperimentConfig":
        base = cls()
        return cls(
            feature_sets=tuple(payload.get("feature_sets", base.feature_sets)),
            targets=tuple(payload.get("targets", base.targets)),
            families=tuple(payload.get("families", base.families)),
            trees_n_configs=payload.get("trees_n_configs"),
            net_n_configs=payload.get("net_n_configs"),
            seed=int(payload.get("seed", 0)),
            workers=int(payload.get("workers", 1)),
            fast_threshold=float(payload.get("fast_threshold", 0.2)),
            net_epochs=int(payload.get("net_epochs", base.net_epochs)),
            net_batch_size=int(payload.get("net_batch_size", base.net_batch_size)),
        )


@dataclass
class ResultGrid:
    """Per-cell nested CV results for (feature set × target × family)."""

    cells: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    seed: int = 0

    def best_fold(self, key) -> FoldResult | None:
        """The scoring fold whose refit model generalized best in a cell."""
        result = self.cells.get(key)
        if result is None:
            return None
        usable = [f for f in result.folds if not f.failed]
        if not usable:
            return None
        return max(usable, key=lambda f: f.test_r2)

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "cells": [
                {
                    "feature_set": k[0],
                    "target": k[1],
                    "family": k[2],
                    "result": v.to_json_dict(),
                }
                for k, v in self.cells.items()
            ],
            "errors": [
                {"feature_set": k[0], "target": k[1], "family": k[2], "error": v}
                for k, v in self.errors.items()
            ],
        }


GRID_CSV_COLUMNS = (
    "feature_set",
    "target",
    "family",
    "mean_test_r2",
    "std_test_r2",
    "partial",
    "n_estimators",
    "max_depth",
    "l1",
    "l2",
    "learning_rate",
    "n_layers",
    "base_width",
    "taper",
    "taper_size",
    "dropout_rate",
    "activation",
)


def _csv_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def grid_to_csv(grid: ResultGrid) -> str:
    """Flat one-row-per-cell view; best config taken from the best fold."""
    lines = [",".join(GRID_CSV_COLUMNS)]
    for key, result in grid.cells.items():
        best = grid.best_fold(key)
        config = best.selected_config if best is not None else None
        cfg_dict = config.to_dict() if config is not None else {}
        row = {
            "feature_set": key[0],
            "target": key[1],
            "family": key[2],
            "mean_test_r2": result.mean_test_r2,
            "std_test_r2": result.std_test_r2,
            "partial": result.partial,
        }
        for name in GRID_CSV_COLUMNS[6:]:
            row[name] = cfg_dict.get(name)
        lines.append(",".join(_csv_value(row[c]) for c in GRID_CSV_COLUMNS))
    for key, message in grid.errors.items():
        row = {c: None for c in GRID_CSV_COLUMNS}
        row.update(feature_set=key[0], target=key[1], family=key[2])
        lines.append(",".join(_csv_value(row[c]) for c in GRID_CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def run_experiment(
    cohort: Cohort,
    feature_sets=None,
    targets=None,
    families=None,
    spaces=None,
    seed: int = 0,
    *,
    workers: int = 1,
    k_outer: int = DEFAULT_K_OUTER,
    k_inner: int = DEFAULT_K_INNER,
    model_sink=None,
) -> ResultGrid:
    """Evaluate every requested (feature set, target, family) cell.

    Cell seeds derive from the master seed and the cell name, so adding or
    removing cells never changes another cell's outcome. Per-cell failures
    are recorded and the rest of the grid still runs. ``model_sink``, when
    given, receives (key, fold_index, model, provenance, config) for every
    refit model as soon as its fold finishes a cell, keeping peak memory
    independent of grid size.
    """
    set_ids = [FeatureSetId(s) for s in (feature_sets or [s.value for s in FeatureSetId])]
    target_kinds = [
        TargetKind.from_string(t) if isinstance(t, str) else t
        for t in (targets or list(TargetKind))
    ]
    family_list = [ModelFamily.from_string(f) for f in (families or list(ModelFamily))]
    spaces = spaces or {}

    grid = ResultGrid(seed=seed)
    for sid in set_ids:
        base_matrix = build_feature_set(cohort, sid)
        row_of = {sid_: i for i, sid_ in enumerate(base_matrix.subject_ids)}
        for kind in target_kinds:
            ids, y = compute_targets(cohort, kind)
            rows = [row_of[i] for i in ids]
            matrix = FeatureMatrix(
                subject_ids=tuple(ids),
                column_names=base_matrix.column_names,
                values=base_matrix.values[rows],
                provenance=base_matrix.provenance,
            )
            for family in family_list:
                key = (sid.value, kind.value, family.value)
                cell_id = "/".join(key)
                space = spaces.get(family)
                try:
                    result = nested_cv(
                        matrix,
                        y,
                        family,
                        space,
                        seed,
                        k_outer=k_outer,
                        k_inner=k_inner,
                        workers=workers,
                        cell_id=cell_id,
                        keep_models=model_sink is not None,
                    )
                except Exception as exc:  # keep the rest of the grid alive
                    grid.errors[key] = f"{type(exc).__name__}: {exc}"
                    continue
                if model_sink is not None:
                    for fold in result.folds:
                        if fold.model is not None:
                            model_sink(
                                key,
                                fold.fold_index,
                                fold.model,
                                fold.provenance,
                                fold.selected_config,
                            )
                            fold.model = None
                grid.cells[key] = result
    return grid
