"""Command-line entry point.

Four subcommands cover the pipeline end to end: ``synth`` writes a
simulated cohort, ``run`` evaluates the feature-set x target x family grid
with nested cross-validation, ``importance`` ranks the features of a saved
model by permutation, and ``progression`` summarizes the motor-score
trajectory with paired t-tests.

Every invocation that writes files also writes a ``manifest.json`` beside
them (tool version, master seed, worker count, input hashes, timestamp);
the data files reference it by name — a ``# manifest: ...`` comment line in
CSVs, a ``"manifest"`` field in JSON — while staying byte-identical across
reruns with the same inputs and seed, whatever the worker count. Exit
codes: 0 on full success, 2 when the grid finished partially, 1 on hard
errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import (
    SCHEDULED_MONTHS,
    Cohort,
    CohortError,
    TargetKind,
    compute_targets,
    parse_cohort,
    write_cohort,
)
from .featureset import FeatureMatrix, FeatureSetId, Provenance, apply_transforms, build_feature_set
from .gbt import GbtModel
from .metrics import classify_fast_from_regression, paired_t_test, permutation_importance, ppv
from .nnet import NetModel
from .search import ExperimentConfig, grid_to_csv, run_experiment
from .synthcohort import SynthSpec, SynthSpecError, generate_cohort, planted_truth

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"


class CliError(Exception):
    """Invalid invocation or input; reported on stderr, exit code 1."""


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _manifest(
    command: str,
    seed: int,
    workers: int,
    config_path,
    inputs,
    outputs,
    **extra,
) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": "pdprog",
        "tool_version": __version__,
        "command": command,
        "config_path": None if config_path is None else str(config_path),
        "master_seed": seed,
        "workers": workers,
        "timestamp_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": sorted(outputs),
        **extra,
    }


def _out_dir(arg: str) -> Path:
    out = Path(arg)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except FileNotFoundError as exc:
        raise CliError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise CliError(f"{path}: expected a JSON object")
    return payload


def _parse_data(args) -> Cohort:
    return parse_cohort(args.clinical, args.device)


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    if args.config is not None:
        spec = SynthSpec.from_dict(_load_json(args.config))
    else:
        spec = SynthSpec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    out = _out_dir(args.out)

    cohort = generate_cohort(spec)
    write_cohort(
        cohort, out / "clinical.csv", out / "device.csv", manifest_ref=MANIFEST_NAME
    )
    truth = {
        "schema_version": SCHEMA_VERSION,
        "manifest": MANIFEST_NAME,
        "spec": spec.to_dict(),
        "mean_pct_change": spec.mean_pct_change,
        "planted_weights": [
            {"feature": name, "weight": weight} for name, weight in planted_truth(spec)
        ],
    }
    _write_json(out / "truth.json", truth)

    manifest = _manifest(
        "synth",
        spec.seed,
        1,
        args.config,
        [args.config] if args.config is not None else [],
        ["clinical.csv", "device.csv", "truth.json"],
    )
    _write_json(out / MANIFEST_NAME, manifest)
    print(f"wrote {len(cohort.subjects)}-subject cohort to {out}")
    return 0


# ------------------------------------------------------------------ run


def _cell_name(key) -> str:
    return "__".join(key)


def _pooled_fast_ppv(result, y, threshold: float):
    """PPV of fast-progressor calls pooled over the outer test folds."""
    pred, actual = [], []
    for fold in result.folds:
        if fold.failed or fold.test_predictions is None:
            continue
        pred.append(np.asarray(fold.test_predictions, dtype=np.float64))
        actual.append(y[fold.test_indices])
    if not pred:
        return None
    predicted_fast = classify_fast_from_regression(np.concatenate(pred), threshold)
    actual_fast = classify_fast_from_regression(np.concatenate(actual), threshold)
    return ppv(predicted_fast, actual_fast)


def cmd_run(args) -> int:
    if args.config is not None:
        config = ExperimentConfig.from_json_dict(_load_json(args.config))
    else:
        config = ExperimentConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.workers is not None:
        config = dataclasses.replace(config, workers=args.workers)
    if args.threshold is not None:
        config = dataclasses.replace(config, fast_threshold=args.threshold)
    out = _out_dir(args.out)
    cells_dir = out / "cells"
    models_dir = out / "models"
    cells_dir.mkdir(exist_ok=True)
    models_dir.mkdir(exist_ok=True)

    cohort = _parse_data(args)
    model_files: list[str] = []

    def sink(key, fold_index, model, provenance, cfg) -> None:
        name = f"{_cell_name(key)}__fold{fold_index}.json"
        _write_json(
            models_dir / name,
            {
                "schema_version": SCHEMA_VERSION,
                "manifest": "../" + MANIFEST_NAME,
                "feature_set": key[0],
                "target": key[1],
                "family": key[2],
                "fold_index": fold_index,
                "config": cfg.to_dict(),
                "provenance": provenance.to_dict() if provenance is not None else None,
                "model": model.to_json_dict(),
            },
        )
        model_files.append(f"models/{name}")

    grid = run_experiment(
        cohort,
        feature_sets=config.feature_sets,
        targets=config.targets,
        families=config.families,
        spaces=config.spaces(),
        seed=config.seed,
        workers=config.workers,
        model_sink=sink,
    )

    targets_cache: dict[str, np.ndarray] = {}
    for kind_name in {k[1] for k in grid.cells}:
        _, y = compute_targets(cohort, TargetKind.from_string(kind_name))
        targets_cache[kind_name] = y

    cell_files = []
    ppv_by_cell = {}
    for key, result in grid.cells.items():
        fast = None
        if key[1] == TargetKind.PCT_CHANGE_24.value:
            fast = _pooled_fast_ppv(result, targets_cache[key[1]], config.fast_threshold)
        ppv_by_cell[key] = fast
        name = f"{_cell_name(key)}.json"
        _write_json(
            cells_dir / name,
            {
                "schema_version": SCHEMA_VERSION,
                "manifest": "../" + MANIFEST_NAME,
                "feature_set": key[0],
                "target": key[1],
                "family": key[2],
                "pooled_fast_ppv": fast,
                "result": result.to_json_dict(),
            },
        )
        cell_files.append(f"cells/{name}")

    partial = bool(grid.errors) or any(r.partial for r in grid.cells.values())
    grid_payload = {
        "schema_version": SCHEMA_VERSION,
        "manifest": MANIFEST_NAME,
        "partial": partial,
        "fast_threshold": config.fast_threshold,
        "pooled_fast_ppv": [
            {
                "feature_set": k[0],
                "target": k[1],
                "family": k[2],
                "ppv": v,
            }
            for k, v in ppv_by_cell.items()
            if k[1] == TargetKind.PCT_CHANGE_24.value
        ],
        "grid": grid.to_json_dict(),
    }
    _write_json(out / "grid.json", grid_payload)
    (out / "grid.csv").write_text(f"# manifest: {MANIFEST_NAME}\n" + grid_to_csv(grid))

    manifest = _manifest(
        "run",
        config.seed,
        config.workers,
        args.config,
        [p for p in (args.config, args.clinical, args.device) if p is not None],
        ["grid.json", "grid.csv", *cell_files, *model_files],
        fast_threshold=config.fast_threshold,
        experiment=config.to_json_dict(),
    )
    _write_json(out / MANIFEST_NAME, manifest)

    n_cells = len(grid.cells)
    print(f"{n_cells} cells evaluated, {len(grid.errors)} failed; results in {out}")
    if partial:
        for key, message in grid.errors.items():
            print(f"  failed {_cell_name(key)}: {message}", file=sys.stderr)
        return 2
    return 0


# ----------------------------------------------------------- importance


def _load_model_artifact(path):
    payload = _load_json(path)
    for field in ("model", "target", "provenance"):
        if field not in payload:
            raise CliError(f"{path}: not a model artifact (missing {field!r})")
    family = payload["model"].get("family")
    if family == "trees":
        model = GbtModel.from_json_dict(payload["model"])
    elif family == "net":
        model = NetModel.from_json_dict(payload["model"])
    else:
        raise CliError(f"{path}: unknown model family {family!r}")
    provenance = Provenance.from_dict(payload["provenance"])
    target = TargetKind.from_string(payload["target"])
    return model, provenance, target


def cmd_importance(args) -> int:
    model, provenance, target = _load_model_artifact(args.model)
    out = _out_dir(args.out)
    cohort = _parse_data(args)

    set_id = FeatureSetId.from_string(provenance.feature_set)
    base = build_feature_set(cohort, set_id)
    ids, y = compute_targets(cohort, target)
    row_of = {sid: i for i, sid in enumerate(base.subject_ids)}
    missing = [sid for sid in ids if sid not in row_of]
    if missing:
        raise CliError(
            f"{len(missing)} target subjects lack rows in feature set "
            f"{set_id.value!r} (first: {missing[0]})"
        )

    # score on the rows the model never saw; fall back to every row when
    # the data has no overlap with the recorded training subjects
    trained_on = set(provenance.train_subject_ids or ())
    held_out = [i for i, sid in enumerate(ids) if sid not in trained_on]
    if not held_out:
        held_out = list(range(len(ids)))
        print("note: no held-out subjects found; scoring on all rows", file=sys.stderr)
    eval_ids = [ids[i] for i in held_out]
    matrix = FeatureMatrix(
        subject_ids=tuple(eval_ids),
        column_names=base.column_names,
        values=base.values[[row_of[sid] for sid in eval_ids]],
        provenance=base.provenance,
    )
    transformed = apply_transforms(matrix, provenance)
    if transformed.values.shape[1] != model.n_features:
        raise CliError(
            f"model expects {model.n_features} features, data provides "
            f"{transformed.values.shape[1]} after transforms"
        )

    report = permutation_importance(
        model,
        transformed.values,
        y[held_out],
        n_repeats=args.repeats,
        seed=args.seed if args.seed is not None else 0,
        feature_names=transformed.column_names,
    )

    header = f"# manifest: {MANIFEST_NAME}\nrank,feature,mean_r2_drop,sd_r2_drop\n"
    ranking = report.ranking()
    full = header + "".join(
        f"{rank},{name},{mean!r},{sd!r}\n"
        for rank, (name, mean, sd) in enumerate(ranking, start=1)
    )
    (out / "importance.csv").write_text(full)
    top = header + "".join(
        f"{rank},{name},{mean!r},{sd!r}\n"
        for rank, (name, mean, sd) in enumerate(ranking[:15], start=1)
    )
    (out / "top15.csv").write_text(top)
    _write_json(
        out / "importance.json",
        {
            "schema_version": SCHEMA_VERSION,
            "manifest": MANIFEST_NAME,
            "model_file": str(args.model),
            "feature_set": set_id.value,
            "target": target.value,
            "baseline_r2": report.baseline_r2,
            "n_repeats": report.n_repeats,
            "seed": report.seed,
            "n_rows_scored": len(held_out),
            "ranking": [
                {"rank": rank, "feature": name, "mean_r2_drop": mean, "sd_r2_drop": sd}
                for rank, (name, mean, sd) in enumerate(ranking, start=1)
            ],
        },
    )
    manifest = _manifest(
        "importance",
        args.seed if args.seed is not None else 0,
        1,
        None,
        [args.model, args.clinical, args.device],
        ["importance.csv", "top15.csv", "importance.json"],
        n_repeats=args.repeats,
    )
    _write_json(out / MANIFEST_NAME, manifest)

    print(f"baseline R^2 {report.baseline_r2:.4f} on {len(held_out)} held-out rows")
    for rank, (name, mean, sd) in enumerate(ranking[:15], start=1):
        print(f"{rank:3d}  {name:40s} {mean:+.5f} +/- {sd:.5f}")
    return 0


# ----------------------------------------------------------- progression


def cmd_progression(args) -> int:
    cohort = _parse_data(args)
    if len(cohort.subjects) < 2:
        raise CliError("progression summary needs at least two subjects")

    visit_rows = []
    for month in SCHEDULED_MONTHS:
        scores = np.array(
            [s.part3_at(month) for s in cohort.subjects], dtype=np.float64
        )
        scores = scores[np.isfinite(scores)]
        if scores.size:
            visit_rows.append(
                (month, scores.size, float(scores.mean()), float(scores.std(ddof=1)))
            )

    test_rows = []
    for month in SCHEDULED_MONTHS[1:]:
        pairs = [
            (s.part3_at(month), s.part3_at(0))
            for s in cohort.subjects
            if math.isfinite(s.part3_at(month)) and math.isfinite(s.part3_at(0))
        ]
        if not pairs:
            continue
        if len(pairs) < 2:
            raise CliError(
                f"month {month} vs baseline: only {len(pairs)} paired subject(s), "
                "need at least 2"
            )
        later = np.array([p[0] for p in pairs])
        base = np.array([p[1] for p in pairs])
        t, p = paired_t_test(later, base)
        test_rows.append((month, len(pairs), t, len(pairs) - 1, p))
    if not any(month == 24 for month, *_ in test_rows):
        raise CliError("no subjects with both baseline and month-24 scores")

    print("visit_month        n       mean         sd")
    for month, n, mean, sd in visit_rows:
        print(f"{month:11d} {n:8d} {mean:10.4f} {sd:10.4f}")
    print()
    print("comparison            n          t   df           p")
    for month, n, t, df, p in test_rows:
        print(f"month {month:2d} vs 0 {n:8d} {t:10.4f} {df:4d} {p:11.3e}")

    if args.out is not None:
        out = _out_dir(args.out)
        header = f"# manifest: {MANIFEST_NAME}\n"
        (out / "visits.csv").write_text(
            header
            + "visit_month,n,mean,sd\n"
            + "".join(
                f"{month},{n},{mean!r},{sd!r}\n" for month, n, mean, sd in visit_rows
            )
        )
        (out / "ttests.csv").write_text(
            header
            + "later_month,baseline_month,n,t,df,p\n"
            + "".join(
                f"{month},0,{n},{t!r},{df},{p!r}\n" for month, n, t, df, p in test_rows
            )
        )
        manifest = _manifest(
            "progression",
            0,
            1,
            None,
            [args.clinical, args.device],
            ["visits.csv", "ttests.csv"],
        )
        _write_json(out / MANIFEST_NAME, manifest)
    return 0


# ----------------------------------------------------------------- main


def _add_data_arguments(parser) -> None:
    parser.add_argument("--clinical", required=True, help="clinical measures CSV")
    parser.add_argument("--device", required=True, help="device recordings CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdprog",
        description="progression modeling from longitudinal gait and clinical data",
    )
    parser.add_argument("--version", action="version", version=f"pdprog {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a simulated cohort")
    p.add_argument("--config", help="cohort spec JSON (defaults built in)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="evaluate the feature-set x target x family grid")
    p.add_argument("--config", help="experiment JSON (defaults to the full grid)")
    _add_data_arguments(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--workers", type=int, help="worker processes (overrides config)")
    p.add_argument(
        "--threshold",
        type=float,
        help="fast-progressor cut on predicted percent change (overrides config)",
    )
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("importance", help="permutation importance of a saved model")
    p.add_argument("--model", required=True, help="model artifact JSON from `run`")
    _add_data_arguments(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="shuffle seed (default 0)")
    p.add_argument("--repeats", type=int, default=100, help="shuffles per feature")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("progression", help="per-visit summary and paired t-tests")
    _add_data_arguments(p)
    p.add_argument("--out", help="also write visits.csv/ttests.csv here")
    p.set_defaults(func=cmd_progression)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, CohortError, SynthSpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
