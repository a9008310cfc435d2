"""Longitudinal ingestion and leakage-aware feature construction.

Every predictor column carries the semester at which its value becomes
knowable. The observation-window guard (VOT, default 3 semesters) rejects any
non-outcome column observed later than the cutoff, which is what keeps the
downstream causal estimates temporally valid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import curriculum as cur
from .errors import EmptyCohort, InputFormatError, LeakageViolation, ZeroExpected
from .macroseries import align_exposure, entry_semester_abs

OUTCOME_TOKENS = frozenset(cur.OUTCOMES)
GRADED_OUTCOMES = frozenset({"pass", "fail"})


@dataclass(frozen=True)
class EnrollmentAttempt:
    student_id: str
    course_code: int
    semester_index: int  # relative to entry, 1-based
    outcome: str
    grade: float | None = None

    def __post_init__(self):
        if self.outcome not in OUTCOME_TOKENS:
            raise ValueError(f"unknown outcome token {self.outcome!r}")
        if self.grade is not None and self.outcome not in GRADED_OUTCOMES:
            raise ValueError("grade present for a non-graded outcome")


@dataclass
class StudentRecord:
    student_id: str
    cohort_year: int
    age_at_entry: float
    entry_score: float = 0.0  # admission-exam score, known before enrollment
    attempts: list = field(default_factory=list)
    last_active_semester: int = 0
    graduated: bool = False

    def __post_init__(self):
        self.attempts = sorted(self.attempts, key=lambda a: (a.semester_index, a.course_code))
        if self.attempts:
            self.last_active_semester = max(a.semester_index for a in self.attempts)

    def attempts_until(self, semester):
        return [a for a in self.attempts if a.semester_index <= semester]

    def passed_courses_until(self, semester):
        return {a.course_code for a in self.attempts_until(semester) if a.outcome == "pass"}


@dataclass(frozen=True)
class ObservationWindow:
    vot_semesters: int = 3

    def __post_init__(self):
        if self.vot_semesters < 1:
            raise ValueError("vot_semesters must be >= 1")


CENSORED = "censored"


def derive_lag(record, dag, window) -> int:
    """Expected-minus-completed course count at the VOT, clamped at zero."""
    expected = cur.expected_courses(dag, window.vot_semesters)
    completed = len(record.passed_courses_until(window.vot_semesters))
    return max(0, expected - completed)


def derive_velocity(record, dag, window) -> float:
    """Completed/expected course ratio at the VOT; may exceed 1."""
    expected = cur.expected_courses(dag, window.vot_semesters)
    if expected == 0:
        raise ZeroExpected("no plan courses scheduled before the observation cutoff")
    return len(record.passed_courses_until(window.vot_semesters)) / expected


def label_dropout(record, grace_semesters, data_end_semester):
    """Outcome label: 0 graduated, 1 permanently inactive, else censored.

    `data_end_semester` is relative to this student's entry. A student is a
    dropout once the inactive gap at data end reaches the grace period.
    """
    if grace_semesters < 1:
        raise ValueError("grace_semesters must be >= 1")
    if record.graduated:
        return 0
    if data_end_semester - record.last_active_semester >= grace_semesters:
        return 1
    return CENSORED


@dataclass
class FeatureMatrix:
    """Leakage-tagged design matrix, one row per (non-censored) student."""

    student_ids: list
    column_names: list
    layers: dict  # column -> N1..N4
    observation_semesters: dict  # column -> semester at which knowable
    values: np.ndarray  # (n, p)
    lag: np.ndarray
    velocity: np.ndarray
    dropout: np.ndarray
    window: ObservationWindow
    censored_ids: list = field(default_factory=list)
    imputation_notes: list = field(default_factory=list)

    @property
    def n(self):
        return len(self.student_ids)

    def column(self, name) -> np.ndarray:
        return self.values[:, self.column_names.index(name)]

    def controls(self, exclude=(), tiers=None) -> np.ndarray:
        keep = [i for i, c in enumerate(self.column_names)
                if c not in exclude and (tiers is None or self.layers[c] in tiers)]
        return self.values[:, keep]

    def control_names(self, exclude=(), tiers=None):
        return [c for c in self.column_names
                if c not in exclude and (tiers is None or self.layers[c] in tiers)]

    def causal_controls(self) -> np.ndarray:
        """Adjustment set for the lag-effect stages: pre-treatment columns only.

        N2/N3 columns are built from the same attempt history that defines lag
        and velocity; conditioning on them absorbs the identifying variation.
        The strike-by-inflation product is left to the interaction stage.
        """
        return self.controls(exclude=("strike_x_inflation",), tiers=("N1", "N4"))


def validate_leakage(matrix, window=None):
    """All non-outcome columns must be observable by the VOT. Returns violations."""
    window = window or matrix.window
    return [
        (name, matrix.observation_semesters[name])
        for name in matrix.column_names
        if matrix.observation_semesters[name] > window.vot_semesters
    ]


def build_features(records, dag, macro_series, window, *, grace_semesters=4,
                   data_end_abs=None, ifc_weights=None):
    """Assemble the N1-N4 design matrix plus lag, velocity and dropout.

    Censored students are dropped from the matrix (their ids are kept for
    reporting). Raises LeakageViolation if any constructed predictor would be
    observed after the cutoff, EmptyCohort if nothing remains.
    """
    records = list(records)
    if not records:
        raise EmptyCohort("no student records supplied")
    vot = window.vot_semesters
    base_year = min(r.cohort_year for r in records)
    if data_end_abs is None:
        data_end_abs = max(entry_semester_abs(r.cohort_year, base_year) + r.last_active_semester - 1
                           for r in records)

    # cohort-level IFC from pre-VOT attempts only (keeps the column observable at VOT)
    early_attempts = [a for r in records for a in r.attempts_until(vot)]
    ifc_by_course = dict(cur.friction_table(early_attempts, weights=ifc_weights).entries)

    labels = {}
    kept, censored_ids = [], []
    for r in records:
        rel_end = data_end_abs - entry_semester_abs(r.cohort_year, base_year) + 1
        lab = label_dropout(r, grace_semesters, rel_end)
        labels[r.student_id] = lab
        (censored_ids if lab == CENSORED else kept).append(r)
    if not kept:
        raise EmptyCohort("every student is censored at data end")
    censored_ids = [r.student_id for r in censored_ids]

    cohort_years = sorted({r.cohort_year for r in records})
    columns = []  # (name, layer, obs_semester, vector)
    n = len(kept)

    def add(name, layer, obs, vec):
        columns.append((name, layer, obs, np.asarray(vec, dtype=float)))

    # N1: pre-entry context
    add("age_at_entry", "N1", 0, [r.age_at_entry for r in kept])
    add("entry_score", "N1", 0, [r.entry_score for r in kept])
    for y in cohort_years[1:]:  # first cohort year is the reference level
        add(f"cohort_{y}", "N1", 0, [1.0 if r.cohort_year == y else 0.0 for r in kept])

    # N2: entry moment
    first = [[a for a in r.attempts if a.semester_index == 1] for r in kept]
    add("first_sem_load", "N2", 1, [len(f) for f in first])
    add("first_sem_pass_rate", "N2", 1,
        [sum(a.outcome == "pass" for a in f) / len(f) if f else 0.0 for f in first])

    # N3: curricular friction and early performance
    early = [r.attempts_until(vot) for r in kept]
    add("fails_count", "N3", vot, [sum(a.outcome == "fail" for a in e) for e in early])
    add("libres_share", "N3", vot,
        [sum(a.outcome == "libre" for a in e) / len(e) if e else 0.0 for e in early])
    add("attempts_count", "N3", vot, [len(e) for e in early])
    add("mean_ifc_attempted", "N3", vot,
        [float(np.mean([ifc_by_course[a.course_code] for a in e])) if e else 0.0 for e in early])

    grade_means, grade_missing = [], []
    for e in early:
        grades = [a.grade for a in e if a.grade is not None]
        grade_means.append(float(np.mean(grades)) if grades else np.nan)
        grade_missing.append(0.0 if grades else 1.0)
    grade_means = np.asarray(grade_means)
    imputation_notes = []
    if np.isnan(grade_means).any():
        cohorts = np.asarray([r.cohort_year for r in kept])
        overall = float(np.nanmean(grade_means)) if not np.isnan(grade_means).all() else 0.0
        for y in cohort_years:
            mask = cohorts == y
            miss = mask & np.isnan(grade_means)
            if miss.any():
                have = mask & ~np.isnan(grade_means)
                fill = float(grade_means[have].mean()) if have.any() else overall
                grade_means[miss] = fill
                imputation_notes.append(
                    f"early_grade_mean: {int(miss.sum())} students in cohort {y} "
                    f"imputed with cohort mean {fill:.6g}")
    add("early_grade_mean", "N3", vot, grade_means)
    add("grade_missing", "N3", vot, grade_missing)

    # N4: lagged macro exposure (past semesters, knowable at VOT)
    exposures = {}
    for lag in (1, 2, 3):
        exposures[lag] = align_exposure(macro_series, kept, lag, window, base_year)
        add(f"strike_lag{lag}", "N4", vot, exposures[lag])
    inflation = align_exposure(macro_series, kept, 0, window, base_year, field="inflation")
    add("inflation", "N4", vot, inflation)
    add("strike_x_inflation", "N4", vot, exposures[2] * inflation)

    names = [c[0] for c in columns]
    matrix = FeatureMatrix(
        student_ids=[r.student_id for r in kept],
        column_names=names,
        layers={c[0]: c[1] for c in columns},
        observation_semesters={c[0]: c[2] for c in columns},
        values=np.column_stack([c[3] for c in columns]) if columns else np.empty((n, 0)),
        lag=np.asarray([derive_lag(r, dag, window) for r in kept], dtype=float),
        velocity=np.asarray([derive_velocity(r, dag, window) for r in kept], dtype=float),
        dropout=np.asarray([labels[r.student_id] for r in kept], dtype=float),
        window=window,
        censored_ids=censored_ids,
        imputation_notes=imputation_notes,
    )
    violations = validate_leakage(matrix, window)
    if violations:
        raise LeakageViolation(violations)
    return matrix


def load_students_csv(students_path, attempts_path):
    """Read `students.csv` and `attempts.csv` into StudentRecord objects."""
    attempts_by_student = {}
    with open(attempts_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, attempts_path,
                         ("student_id", "course_code", "semester", "outcome", "grade"))
        for i, row in enumerate(reader, start=2):
            try:
                outcome = row["outcome"]
                if outcome not in OUTCOME_TOKENS:
                    raise ValueError(f"unknown outcome token {outcome!r}")
                grade = row["grade"].strip()
                attempt = EnrollmentAttempt(
                    student_id=row["student_id"],
                    course_code=int(row["course_code"]),
                    semester_index=int(row["semester"]),
                    outcome=outcome,
                    grade=float(grade) if grade else None,
                )
            except (ValueError, TypeError) as exc:
                raise InputFormatError(attempts_path, i, str(exc)) from exc
            attempts_by_student.setdefault(attempt.student_id, []).append(attempt)

    records = []
    with open(students_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, students_path,
                         ("student_id", "cohort_year", "age_at_entry", "graduated",
                          "last_active_semester"))
        for i, row in enumerate(reader, start=2):
            try:
                sid = row["student_id"]
                records.append(StudentRecord(
                    student_id=sid,
                    cohort_year=int(row["cohort_year"]),
                    age_at_entry=float(row["age_at_entry"]),
                    entry_score=float(row.get("entry_score") or 0.0),
                    attempts=attempts_by_student.get(sid, []),
                    graduated=row["graduated"].strip().lower() in ("1", "true", "yes"),
                ))
            except (ValueError, TypeError) as exc:
                raise InputFormatError(students_path, i, str(exc)) from exc
    return records


def _require_columns(reader, path, columns):
    fields = reader.fieldnames or []
    missing = [c for c in columns if c not in fields]
    if missing:
        raise InputFormatError(path, 1, f"missing required columns: {missing}")
