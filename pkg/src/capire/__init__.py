"""CAPIRE: curriculum-aware causal analytics for student trajectories.

Submodules:
  curriculum  -- prerequisite DAG and course friction metrics
  datalayer   -- leakage-guarded feature construction at a fixed horizon
  macroseries -- semester-indexed macro stressor series and lag alignment
  dml         -- cross-fitted double ML (ATE and spline-based CATE)
  macro       -- dual-stressor lag models, interaction and placebo checks
  archetype   -- density-based trajectory archetypes with stability checks
  synth       -- synthetic cohort generator with planted ground truth
  cli         -- command-line entry points
"""

__version__ = "0.1.0"

__all__ = [
    "archetype",
    "cli",
    "curriculum",
    "datalayer",
    "dml",
    "errors",
    "macro",
    "macroseries",
    "synth",
]
