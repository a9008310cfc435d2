"""Synthetic cohort generator with planted ground-truth causal structure.

Latent ability drives course outcomes (hence lag and velocity) and enters the
dropout equation directly, so the naive lag-on-dropout regression is
confounded while the cross-fitted estimator is not. Withdrawals and libres
are drawn independently of ability, which guarantees exogenous variation in
lag that survives partialling out the observable controls.

Dropout is a Bernoulli draw from a linear-probability index, so the planted
coefficients are themselves the ground-truth effects (no re-estimation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .curriculum import Course, CurriculumDag, build_dag, expected_courses
from .datalayer import EnrollmentAttempt, ObservationWindow, StudentRecord
from .dml import Residuals, estimate_ate
from .errors import ConfigInvalid
from .macroseries import MacroSeries, entry_semester_abs


@dataclass(frozen=True)
class SynthConfig:
    n_students: int = 2000
    n_cohorts: int = 10
    base_year: int = 2004
    seed: int = 42
    vot_semesters: int = 3
    grace_semesters: int = 4
    total_semesters: int = 12  # observation horizon per cohort, relative to entry

    # attempt-outcome process
    base_fail_prob: float = 0.28
    ability_fail_slope: float = 0.12  # fail prob decrease per ability sd
    withdraw_prob: float = 0.35  # exogenous delay, independent of ability
    libre_prob: float = 0.08  # exogenous delay, independent of ability
    extra_course_prob: float = 0.40  # chance of one ahead-of-plan course per semester
    entry_score_noise: float = 0.10  # admission-score measurement error (sd)
    friction_bumps: dict = field(default_factory=dict)  # course_code -> extra fail prob
    grade_ability_slope: float = 1.6
    grade_noise: float = 0.7

    # planted dropout structure (linear-probability index)
    dropout_base: float = 0.10
    planted_ate: float = 0.05
    planted_cate_slope: float = 0.0  # effect of (velocity - cate_center) on the lag effect
    cate_center: float = 0.0
    planted_strike_lag2: float = 0.0
    planted_interaction: float = 0.0
    confounding: float = 0.10  # ability coefficient (entered negatively)

    # macro series
    strike_low: float = 0.0
    strike_high: float = 1.0
    inflation_low: float = 0.05
    inflation_high: float = 0.45

    def validate(self):
        if self.n_students < 50:
            raise ConfigInvalid("n_students must be >= 50")
        if self.n_cohorts < 1:
            raise ConfigInvalid("n_cohorts must be >= 1")
        for name in ("base_fail_prob", "withdraw_prob", "libre_prob",
                     "extra_course_prob", "dropout_base"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigInvalid(f"{name} must be in [0, 1], got {v}")
        if self.total_semesters < self.vot_semesters + self.grace_semesters:
            raise ConfigInvalid("total_semesters must cover VOT plus the grace period")
        return self


@dataclass(frozen=True)
class GroundTruth:
    true_ate: float
    true_cate: list  # (velocity, effect) on a fixed grid
    true_strike_lag1: float
    true_strike_lag2: float
    true_strike_lag3: float
    true_interaction: float
    ability: dict  # student_id -> latent ability

    def to_dict(self):
        return {
            "true_ate": self.true_ate,
            "true_cate": [[v, e] for v, e in self.true_cate],
            "true_strike_lag1": self.true_strike_lag1,
            "true_strike_lag2": self.true_strike_lag2,
            "true_strike_lag3": self.true_strike_lag3,
            "true_interaction": self.true_interaction,
            "ability": self.ability,
        }


DEFAULT_PLAN_LOADS = (4, 4, 4, 4, 4, 4, 3, 3, 2, 2)  # 34 courses


def default_curriculum() -> CurriculumDag:
    """34-course synthetic programme with chained prerequisites."""
    courses, plan, edges = [], [], []
    code = 0
    prev_sem = []
    for sem_idx, load in enumerate(DEFAULT_PLAN_LOADS, start=1):
        sem_codes = []
        for _ in range(load):
            code += 1
            courses.append(Course(code, f"Course {code}", sem_idx))
            sem_codes.append(code)
        for j, c in enumerate(sem_codes):
            if prev_sem:
                edges.append((prev_sem[j % len(prev_sem)], c))
                edges.append((prev_sem[(j + 1) % len(prev_sem)], c))
        plan.append(sem_codes)
        prev_sem = sem_codes
    return build_dag(courses, set(edges), plan)


def cate_effect(config, velocity):
    return config.planted_ate + config.planted_cate_slope * (velocity - config.cate_center)


def generate_cohort(config: SynthConfig, dag: CurriculumDag = None):
    """Simulate students through the curriculum; returns
    (records, macro_series, ground_truth). Deterministic by seed."""
    config.validate()
    dag = dag or default_curriculum()
    rng = np.random.default_rng(config.seed)
    vot = config.vot_semesters

    last_entry = entry_semester_abs(config.base_year + config.n_cohorts - 1, config.base_year)
    # cover pre-entry semesters (lagged exposure) and post-horizon (placebo)
    first_sem = 1 - vot
    last_sem = last_entry + config.total_semesters + 2
    sems = list(range(first_sem, last_sem + 1))
    strikes = rng.uniform(config.strike_low, config.strike_high, len(sems))
    inflations = rng.uniform(config.inflation_low, config.inflation_high, len(sems))
    series = MacroSeries(
        strike_intensity={s: float(v) for s, v in zip(sems, strikes)},
        inflation={s: float(v) for s, v in zip(sems, inflations)},
    )

    prereqs = {c: dag.prerequisites(c) for c in dag.courses}
    plan_sem = {c: dag.courses[c].nominal_semester for c in dag.courses}
    expected_at_vot = expected_courses(dag, vot)
    max_dropout_active = config.total_semesters - config.grace_semesters

    records, ability_map = [], {}
    for i in range(config.n_students):
        sid = f"s{i:05d}"
        # truncated so the dropout index below stays inside the clip range:
        # untruncated tails would attenuate the planted effect at the clips
        ability = float(np.clip(rng.standard_normal(), -2.5, 2.5))
        ability_map[sid] = round(ability, 6)
        cohort_year = config.base_year + int(i % config.n_cohorts)
        entry_abs = entry_semester_abs(cohort_year, config.base_year)
        age = float(np.round(18.0 + rng.exponential(2.0), 2))
        # noisy pre-entry aptitude measurement; the observable confounder proxy
        score = float(np.round(ability + rng.normal(0.0, config.entry_score_noise), 4))

        passed: set = set()
        attempts: list = []

        def attend(semester):
            available = sorted(
                (c for c in dag.courses
                 if c not in passed and plan_sem[c] <= min(semester + 1, len(dag.plan))
                 and prereqs[c] <= passed),
                key=lambda c: (plan_sem[c], c),
            )
            load = len(dag.plan[semester - 1]) if semester <= len(dag.plan) else 3
            if rng.random() < config.extra_course_prob:
                load += 1
            for course in available[:load]:
                draw = rng.random()
                if draw < config.withdraw_prob:
                    attempts.append(EnrollmentAttempt(sid, course, semester, "withdraw"))
                    continue
                if draw < config.withdraw_prob + config.libre_prob:
                    attempts.append(EnrollmentAttempt(sid, course, semester, "libre"))
                    continue
                p_fail = np.clip(
                    config.base_fail_prob + config.friction_bumps.get(course, 0.0)
                    - config.ability_fail_slope * ability, 0.02, 0.98)
                if rng.random() < p_fail:
                    grade = float(np.clip(rng.normal(2.5 + 0.3 * ability, 0.8), 0.0, 3.9))
                    attempts.append(EnrollmentAttempt(sid, course, semester, "fail",
                                                      round(grade, 2)))
                else:
                    passed.add(course)
                    grade = float(np.clip(
                        rng.normal(6.0 + config.grade_ability_slope * ability,
                                   config.grade_noise), 4.0, 10.0))
                    attempts.append(EnrollmentAttempt(sid, course, semester, "pass",
                                                      round(grade, 2)))

        for s in range(1, vot + 1):
            attend(s)

        completed = len({a.course_code for a in attempts if a.outcome == "pass"})
        lag = max(0, expected_at_vot - completed)
        velocity = completed / expected_at_vot
        vot_abs = entry_abs + vot - 1
        s2 = series.value(vot_abs - 2)
        infl = series.value(vot_abs, "inflation")
        index = (config.dropout_base
                 + cate_effect(config, velocity) * lag
                 + config.planted_strike_lag2 * s2
                 + config.planted_interaction * s2 * infl
                 - config.confounding * ability)
        dropped = bool(rng.random() < np.clip(index, 0.005, 0.995))

        if dropped:
            last_active = vot + int(rng.integers(0, max_dropout_active - vot + 1))
            graduated = False
        else:
            last_active = vot + int(rng.integers(3, config.total_semesters - vot + 1))
            graduated = True
        for s in range(vot + 1, last_active + 1):
            attend(s)
        if not any(a.semester_index == last_active for a in attempts):
            # keep the activity invariant: mark presence with a withdraw event
            fallback = sorted(set(dag.courses) - passed) or sorted(dag.courses)
            attempts.append(EnrollmentAttempt(sid, fallback[0], last_active, "withdraw"))

        records.append(StudentRecord(
            student_id=sid, cohort_year=cohort_year, age_at_entry=age,
            entry_score=score, attempts=attempts, graduated=graduated,
        ))

    grid = np.linspace(0.0, 1.2, 20)
    truth = GroundTruth(
        true_ate=config.planted_ate,
        true_cate=[(float(v), float(cate_effect(config, v))) for v in grid],
        true_strike_lag1=0.0,
        true_strike_lag2=config.planted_strike_lag2,
        true_strike_lag3=0.0,
        true_interaction=config.planted_interaction,
        ability=ability_map,
    )
    return records, series, truth


def naive_estimate(matrix):
    """Unadjusted OLS of dropout on lag (HC1 inference); the confounded baseline."""
    y = matrix.dropout
    t = matrix.lag
    return estimate_ate(Residuals(y_tilde=y - y.mean(), t_tilde=t - t.mean()),
                        estimand="naive OLS lag -> dropout")


def naive_vs_dml_gap(matrix, *, K=5, seed=42, spec=None):
    """(naive, dml) estimates side by side on the same feature matrix."""
    from .dml import NuisanceSpec, run_dml

    naive = naive_estimate(matrix)
    dml_est = run_dml(matrix.values, matrix.dropout, matrix.lag, K=K, seed=seed,
                      spec=spec or NuisanceSpec(), estimand="DML lag -> dropout")
    return naive, dml_est


# ---------------------------------------------------------------- file output

def write_dataset(outdir, records, series, truth, dag=None):
    """Write students/attempts/macro/curriculum CSVs plus ground_truth.json."""
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    dag = dag or default_curriculum()

    with open(outdir / "students.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("student_id,cohort_year,age_at_entry,entry_score,"
                 "graduated,last_active_semester\n")
        for r in records:
            fh.write(f"{r.student_id},{r.cohort_year},{r.age_at_entry:.10g},"
                     f"{r.entry_score:.10g},{int(r.graduated)},{r.last_active_semester}\n")

    with open(outdir / "attempts.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("student_id,course_code,semester,outcome,grade\n")
        for r in records:
            for a in r.attempts:
                grade = f"{a.grade:.10g}" if a.grade is not None else ""
                fh.write(f"{a.student_id},{a.course_code},{a.semester_index},"
                         f"{a.outcome},{grade}\n")

    with open(outdir / "macro.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("semester_abs,strike_intensity,inflation\n")
        for s in sorted(series.strike_intensity):
            fh.write(f"{s},{series.strike_intensity[s]:.10g},{series.inflation[s]:.10g}\n")

    with open(outdir / "curriculum.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("code,name,semester\n")
        for code in sorted(dag.courses):
            c = dag.courses[code]
            fh.write(f"{c.code},{c.name},{c.nominal_semester}\n")

    with open(outdir / "prereqs.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("prereq_code,course_code\n")
        for p, d in sorted(dag.edges):
            fh.write(f"{p},{d}\n")

    with open(outdir / "ground_truth.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(truth.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
