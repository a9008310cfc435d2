"""Macro time series (strikes, inflation) and student-timeline alignment.

Absolute semester convention: semester 1 is the first semester of the
earliest cohort year; each cohort year spans two semesters, and students
enter at the first semester of their cohort year.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InputFormatError, SeriesGap

SEMESTERS_PER_YEAR = 2


def entry_semester_abs(cohort_year: int, base_year: int) -> int:
    return (cohort_year - base_year) * SEMESTERS_PER_YEAR + 1


@dataclass(frozen=True)
class MacroSeries:
    """Per-absolute-semester strike intensity and inflation (fractional IPC)."""

    strike_intensity: dict  # semester_abs -> float >= 0
    inflation: dict  # semester_abs -> float

    def __post_init__(self):
        sems = sorted(self.strike_intensity)
        if sems != sorted(self.inflation):
            raise ValueError("strike and inflation series cover different semesters")
        if sems and sems != list(range(sems[0], sems[-1] + 1)):
            raise ValueError("macro series must cover contiguous semesters")

    def value(self, semester_abs, field="strike_intensity"):
        series = getattr(self, field)
        if semester_abs not in series:
            raise SeriesGap(f"macro series missing semester {semester_abs}")
        return series[semester_abs]

    def normalized_strikes(self):
        """Strike series rescaled to [0, 1] by the series maximum."""
        peak = max(self.strike_intensity.values(), default=0.0)
        if peak <= 0:
            return dict(self.strike_intensity)
        return {s: v / peak for s, v in self.strike_intensity.items()}


def align_exposure(series, records, lag, window, base_year, field="strike_intensity"):
    """Per-student series value at the student's VOT semester minus `lag`.

    lag 0 reads the VOT semester itself; negative lags read future semesters
    (used only for placebo falsification, never as a regular feature).
    """
    out = np.empty(len(records), dtype=float)
    for i, r in enumerate(records):
        sem = entry_semester_abs(r.cohort_year, base_year) + window.vot_semesters - 1 - lag
        out[i] = series.value(sem, field)
    return out


def load_macro_csv(path) -> MacroSeries:
    """Read `macro.csv`: semester_abs,strike_intensity,inflation."""
    strike, inflation = {}, {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = [c for c in ("semester_abs", "strike_intensity", "inflation") if c not in fields]
        if missing:
            raise InputFormatError(path, 1, f"missing required columns: {missing}")
        for i, row in enumerate(reader, start=2):
            try:
                sem = int(row["semester_abs"])
                strike[sem] = float(row["strike_intensity"])
                inflation[sem] = float(row["inflation"])
            except (ValueError, TypeError) as exc:
                raise InputFormatError(path, i, str(exc)) from exc
    return MacroSeries(strike_intensity=strike, inflation=inflation)
