"""Longitudinal cohort model and CSV ingestion.

A cohort is two files. ``clinical.csv`` holds one row per subject with 40
baseline clinical measures (free-form names except ``part3_baseline_total``,
which must be present). ``device.csv`` holds one row per instrumented test
run: subject, visit month on the 0/6/12/18/24 schedule, run number 1-3, the
clinician-scored motor total for that visit, and 148 device-derived gait and
postural-sway measures of which exactly 22 come in ``_left``/``_right``
pairs.

Parsing is strict about structure (column counts, duplicate keys, unknown
subjects, score range, schedule) and lenient about missingness: empty cells
become NaN and are imputed downstream. Subjects without a usable motor score
at month 0 or month 24 cannot contribute a progression target and are
excluded, not errored; their ids are kept on the cohort for reporting.

Floats are serialized with ``repr`` so a write/parse round trip reproduces
every value bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SCHEDULED_MONTHS = (0, 6, 12, 18, 24)
RUN_NUMBERS = (1, 2, 3)
N_CLINICAL_MEASURES = 40
N_DEVICE_MEASURES = 148
N_LATERAL_PAIRS = 22
PART3_MIN = 0.0
PART3_MAX = 132.0
BASELINE_TOTAL_COLUMN = "part3_baseline_total"
FAST_PROGRESSOR_THRESHOLD = 0.2

_DEVICE_FIXED_COLUMNS = ("subject_id", "visit_month", "run", "part3_total")


class CohortError(ValueError):
    """Malformed cohort file: structure, keys, or value constraints."""


class UndefinedTargetError(ValueError):
    """Requested progression target does not exist for the subject."""


class TargetKind(Enum):
    """Progression target derived from the month-0 and month-24 motor totals."""

    SCORE_24 = "score24"
    DELTA_24 = "delta24"
    PCT_CHANGE_24 = "pct_change24"

    @classmethod
    def from_string(cls, value: str) -> "TargetKind":
        for kind in cls:
            if kind.value == value:
                return kind
        known = ", ".join(k.value for k in cls)
        raise ValueError(f"unknown target kind {value!r} (expected one of: {known})")


@dataclass(frozen=True)
class Visit:
    """One scheduled visit: motor total plus up to three device test runs.

    ``runs`` is a float array of shape (n_runs, n_measures) aligned with
    ``measure_names`` (shared with the owning cohort); missing measurements
    are NaN. ``part3_total`` is NaN when the visit has device data but no
    usable motor score.
    """

    month: int
    part3_total: float
    run_numbers: tuple[int, ...]
    runs: np.ndarray = field(repr=False)
    measure_names: tuple[str, ...] = field(repr=False)

    @property
    def device_runs(self) -> list[dict[str, float]]:
        """Run records as measure-name maps (convenience view of ``runs``)."""
        return [dict(zip(self.measure_names, row)) for row in self.runs]


@dataclass(frozen=True)
class Subject:
    id: str
    clinical: dict[str, float]
    visits: tuple[Visit, ...]
    age: float | None = None
    is_male: bool | None = None

    def visit(self, month: int) -> Visit | None:
        for v in self.visits:
            if v.month == month:
                return v
        return None

    def part3_at(self, month: int) -> float:
        """Motor total at a month, NaN when the visit or score is missing."""
        v = self.visit(month)
        return float("nan") if v is None else v.part3_total


@dataclass(frozen=True)
class Cohort:
    subjects: tuple[Subject, ...]
    clinical_measure_names: tuple[str, ...]
    device_measure_names: tuple[str, ...]
    lateral_pairs: tuple[tuple[str, str], ...]
    excluded_subject_ids: tuple[str, ...] = ()

    @property
    def subject_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.subjects)

    def __len__(self) -> int:
        return len(self.subjects)


def median_of_runs(values) -> float:
    """Median over the available (finite) run values of one measure.

    Repeated runs exist to absorb test-retest noise; the median is the
    per-visit summary used everywhere downstream.
    """
    finite = [float(v) for v in values if math.isfinite(float(v))]
    if not finite:
        raise CohortError("median_of_runs needs at least one finite value")
    return float(np.median(finite))


def compute_target(subject: Subject, kind: TargetKind) -> float:
    """Progression target for one subject; raises when it is undefined."""
    m0 = subject.part3_at(0)
    m24 = subject.part3_at(24)
    if not math.isfinite(m24):
        raise UndefinedTargetError(f"{subject.id}: no month-24 motor total")
    if kind is TargetKind.SCORE_24:
        return m24
    if not math.isfinite(m0):
        raise UndefinedTargetError(f"{subject.id}: no month-0 motor total")
    if kind is TargetKind.DELTA_24:
        return m24 - m0
    if kind is TargetKind.PCT_CHANGE_24:
        if m0 == 0.0:
            raise UndefinedTargetError(
                f"{subject.id}: percent change undefined at baseline total 0"
            )
        return (m24 - m0) / m0
    raise ValueError(f"unhandled target kind {kind!r}")


def compute_targets(
    cohort: Cohort, kind: TargetKind
) -> tuple[tuple[str, ...], np.ndarray]:
    """Targets for every subject where defined, in cohort order.

    Subjects whose target is undefined (percent change at baseline 0) are
    silently dropped; retained ids come back alongside the value vector.
    """
    ids: list[str] = []
    values: list[float] = []
    for s in cohort.subjects:
        try:
            y = compute_target(s, kind)
        except UndefinedTargetError:
            continue
        ids.append(s.id)
        values.append(y)
    return tuple(ids), np.asarray(values, dtype=np.float64)


def label_fast_progressor(
    pct_change: float, threshold: float = FAST_PROGRESSOR_THRESHOLD
) -> bool:
    """Fast progressor: percent change of ``threshold`` (20%) or more."""
    return bool(pct_change >= threshold)


def _parse_float(text: str, where: str) -> float:
    if text == "":
        return float("nan")
    try:
        return float(text)
    except ValueError as exc:
        raise CohortError(f"{where}: not a number: {text!r}") from exc


def _parse_int(text: str, where: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise CohortError(f"{where}: not an integer: {text!r}") from exc


def _format_float(value: float) -> str:
    v = float(value)
    if math.isnan(v):
        return ""
    return repr(v)


def _csv_rows(fh):
    """CSV rows with leading full-line comments (``#`` prefix) skipped.

    Files written by the command-line tool carry a ``# manifest: ...``
    reference line above the header; everything from the header on is
    passed through untouched.
    """
    reader = csv.reader(fh)
    started = False
    for row in reader:
        if not started and row and row[0].startswith("#"):
            continue
        started = True
        yield row


def _lateral_pairs_from(names) -> tuple[tuple[str, str], ...]:
    present = set(names)
    pairs = []
    for name in names:
        if name.endswith("_left"):
            right = name[: -len("_left")] + "_right"
            if right in present:
                pairs.append((name, right))
    return tuple(pairs)


def _read_clinical(path) -> tuple[tuple[str, ...], dict[str, dict[str, float]]]:
    with open(path, newline="") as fh:
        reader = _csv_rows(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortError(f"{path}: empty file") from None
        if not header or header[0] != "subject_id":
            raise CohortError(f"{path}: first column must be subject_id")
        names = tuple(header[1:])
        if len(names) != N_CLINICAL_MEASURES:
            raise CohortError(
                f"{path}: expected {N_CLINICAL_MEASURES} clinical measures, "
                f"found {len(names)}"
            )
        if len(set(names)) != len(names):
            raise CohortError(f"{path}: duplicate clinical measure names")
        if BASELINE_TOTAL_COLUMN not in names:
            raise CohortError(f"{path}: missing required column {BASELINE_TOTAL_COLUMN}")
        rows: dict[str, dict[str, float]] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(names) + 1:
                raise CohortError(
                    f"{path}:{lineno}: expected {len(names) + 1} fields, got {len(row)}"
                )
            sid = row[0]
            if sid in rows:
                raise CohortError(f"{path}:{lineno}: duplicate subject id {sid!r}")
            rows[sid] = {
                name: _parse_float(cell, f"{path}:{lineno}:{name}")
                for name, cell in zip(names, row[1:])
            }
    return names, rows


def _read_device(path, known_subjects):
    with open(path, newline="") as fh:
        reader = _csv_rows(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortError(f"{path}: empty file") from None
        if tuple(header[: len(_DEVICE_FIXED_COLUMNS)]) != _DEVICE_FIXED_COLUMNS:
            raise CohortError(
                f"{path}: header must start with {', '.join(_DEVICE_FIXED_COLUMNS)}"
            )
        names = tuple(header[len(_DEVICE_FIXED_COLUMNS):])
        if len(names) != N_DEVICE_MEASURES:
            raise CohortError(
                f"{path}: expected {N_DEVICE_MEASURES} device measures, "
                f"found {len(names)}"
            )
        if len(set(names)) != len(names):
            raise CohortError(f"{path}: duplicate device measure names")
        pairs = _lateral_pairs_from(names)
        if len(pairs) != N_LATERAL_PAIRS:
            raise CohortError(
                f"{path}: expected {N_LATERAL_PAIRS} left/right measure pairs, "
                f"found {len(pairs)}"
            )
        # (subject, month) -> {run: values}; part3 per visit checked for agreement
        visits: dict[tuple[str, int], dict[int, np.ndarray]] = {}
        part3: dict[tuple[str, int], float] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(_DEVICE_FIXED_COLUMNS) + len(names):
                raise CohortError(
                    f"{path}:{lineno}: expected "
                    f"{len(_DEVICE_FIXED_COLUMNS) + len(names)} fields, got {len(row)}"
                )
            where = f"{path}:{lineno}"
            sid = row[0]
            if sid not in known_subjects:
                raise CohortError(f"{where}: unknown subject {sid!r}")
            month = _parse_int(row[1], f"{where}:visit_month")
            if month not in SCHEDULED_MONTHS:
                raise CohortError(
                    f"{where}: visit_month {month} not on the schedule "
                    f"{SCHEDULED_MONTHS}"
                )
            run = _parse_int(row[2], f"{where}:run")
            if run not in RUN_NUMBERS:
                raise CohortError(f"{where}: run {run} outside {RUN_NUMBERS}")
            score = _parse_float(row[3], f"{where}:part3_total")
            if math.isfinite(score) and not (PART3_MIN <= score <= PART3_MAX):
                raise CohortError(
                    f"{where}: part3_total {score} outside "
                    f"[{PART3_MIN}, {PART3_MAX}]"
                )
            key = (sid, month)
            runs = visits.setdefault(key, {})
            if run in runs:
                raise CohortError(
                    f"{where}: duplicate run {run} for subject {sid!r} month {month}"
                )
            runs[run] = np.array(
                [_parse_float(c, f"{where}:{n}") for n, c in zip(names, row[4:])],
                dtype=np.float64,
            )
            if key not in part3:
                part3[key] = score
            else:
                prev = part3[key]
                same = (math.isnan(prev) and math.isnan(score)) or prev == score
                if not same:
                    raise CohortError(
                        f"{where}: conflicting part3_total for subject {sid!r} "
                        f"month {month}: {prev} vs {score}"
                    )
    return names, pairs, visits, part3


def parse_cohort(clinical_path, device_path) -> Cohort:
    """Read and validate the two cohort files.

    Returns the retained cohort; subjects lacking a finite month-0 or
    month-24 motor total are dropped and listed on
    ``Cohort.excluded_subject_ids``.
    """
    clinical_names, clinical_rows = _read_clinical(clinical_path)
    device_names, pairs, visit_runs, visit_part3 = _read_device(
        device_path, clinical_rows.keys()
    )

    by_subject: dict[str, list[Visit]] = {sid: [] for sid in clinical_rows}
    for (sid, month), runs in visit_runs.items():
        numbers = tuple(sorted(runs))
        stacked = np.stack([runs[r] for r in numbers])
        by_subject[sid].append(
            Visit(
                month=month,
                part3_total=float(visit_part3[(sid, month)]),
                run_numbers=numbers,
                runs=stacked,
                measure_names=device_names,
            )
        )

    subjects: list[Subject] = []
    excluded: list[str] = []
    for sid, clinical in clinical_rows.items():
        visits = tuple(sorted(by_subject[sid], key=lambda v: v.month))
        age = clinical.get("age")
        sex = clinical.get("gender_male")
        subject = Subject(
            id=sid,
            clinical=clinical,
            visits=visits,
            age=age if age is not None and math.isfinite(age) else None,
            is_male=bool(sex) if sex is not None and math.isfinite(sex) else None,
        )
        if math.isfinite(subject.part3_at(0)) and math.isfinite(subject.part3_at(24)):
            subjects.append(subject)
        else:
            excluded.append(sid)

    return Cohort(
        subjects=tuple(subjects),
        clinical_measure_names=clinical_names,
        device_measure_names=device_names,
        lateral_pairs=pairs,
        excluded_subject_ids=tuple(excluded),
    )


def write_cohort(
    cohort: Cohort, clinical_path, device_path, manifest_ref: str | None = None
) -> None:
    """Serialize the retained cohort back to the two-file format.

    ``manifest_ref`` adds a ``# manifest: <name>`` line above each header
    (the readers skip it), tying the files to a run manifest.
    """
    comment = f"# manifest: {manifest_ref}\r\n" if manifest_ref else ""
    with open(clinical_path, "w", newline="") as fh:
        fh.write(comment)
        writer = csv.writer(fh)
        writer.writerow(["subject_id", *cohort.clinical_measure_names])
        for s in cohort.subjects:
            writer.writerow(
                [s.id]
                + [_format_float(s.clinical[name]) for name in cohort.clinical_measure_names]
            )
    with open(device_path, "w", newline="") as fh:
        fh.write(comment)
        writer = csv.writer(fh)
        writer.writerow([*_DEVICE_FIXED_COLUMNS, *cohort.device_measure_names])
        for s in cohort.subjects:
            for visit in s.visits:
                for number, values in zip(visit.run_numbers, visit.runs):
                    writer.writerow(
                        [s.id, visit.month, number, _format_float(visit.part3_total)]
                        + [_format_float(v) for v in values]
                    )
