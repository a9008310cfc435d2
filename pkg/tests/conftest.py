"""Shared fixtures: a small hand-built cohort and a full synthetic dataset."""

import numpy as np
import pytest

from capire import datalayer as dl
from capire import synth
from capire.curriculum import Course, build_dag
from capire.macroseries import MacroSeries


@pytest.fixture(scope="session")
def tiny_dag():
    courses = [Course(1, "A", 1), Course(2, "B", 1), Course(3, "C", 2), Course(4, "D", 3)]
    return build_dag(courses, {(1, 3), (2, 3)}, [[1, 2], [3], [4]])


@pytest.fixture(scope="session")
def flat_series():
    sems = range(-4, 30)
    return MacroSeries(
        strike_intensity={s: 0.5 + 0.01 * s for s in sems},
        inflation={s: 0.2 for s in sems},
    )


def make_record(sid, attempts, cohort_year=2004, age=19.0, graduated=False):
    return dl.StudentRecord(student_id=sid, cohort_year=cohort_year,
                            age_at_entry=age, attempts=attempts, graduated=graduated)


@pytest.fixture(scope="session")
def synth_bundle():
    """One default synthetic cohort plus its feature matrix (reused read-only)."""
    cfg = synth.SynthConfig(seed=5, n_students=600)
    dag = synth.default_curriculum()
    records, series, truth = synth.generate_cohort(cfg, dag)
    window = dl.ObservationWindow(cfg.vot_semesters)
    matrix = dl.build_features(records, dag, series, window,
                               grace_semesters=cfg.grace_semesters)
    return {"cfg": cfg, "dag": dag, "records": records, "series": series,
            "truth": truth, "window": window, "matrix": matrix}


@pytest.fixture(scope="session")
def blob_data():
    """Three well-separated Gaussian blobs (unit sd, centers 10 sd apart)."""
    rng = np.random.default_rng(0)
    centers = np.array([
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [10.0, 10.0, 10.0, 10.0, 10.0],
        [10.0, -10.0, 10.0, -10.0, 10.0],
    ])
    per = 60
    X = np.vstack([rng.normal(c, 1.0, size=(per, 5)) for c in centers])
    labels = np.repeat(np.arange(3), per)
    return X, labels
