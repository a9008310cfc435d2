"""Command-line orchestration: friction | features | estimate | macro |
archetypes | synth. Every command is a pure function of (inputs, flags, seed)
and writes JSON/CSV reports only.

Exit codes: 0 success, 2 input error, 3 leakage, 4 degenerate estimation,
5 clustering failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import archetype as arch
from . import curriculum as cur
from . import datalayer as dl
from . import macro as mac
from . import synth
from .dml import NuisanceSpec, run_cate, run_dml
from .errors import (CapireError, CollinearBasis, ConfigInvalid,
                     DegenerateTreatment, InputFormatError, LeakageViolation,
                     NoAttempts, TooFewClusters)
from .macroseries import align_exposure, load_macro_csv

EXIT_INPUT = 2
EXIT_LEAKAGE = 3
EXIT_DEGENERATE = 4
EXIT_CLUSTERING = 5


def read_config(path):
    """TOML-like key=value file; values coerced to bool/int/float when possible."""
    config = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputFormatError(path, line_no, "expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            config[key] = _coerce(value)
    return config


def _coerce(value):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for caster in (int, float):
        try:
            return caster(value)
        except ValueError:
            pass
    return value.strip('"')


def _fmt(x):
    return f"{float(x):.10g}"


def write_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")


def load_inputs(args, need_macro=True):
    data = Path(args.data)
    dag = cur.load_curriculum_csv(data / "curriculum.csv", data / "prereqs.csv")
    records = dl.load_students_csv(data / "students.csv", data / "attempts.csv")
    series = load_macro_csv(data / "macro.csv") if need_macro else None
    return dag, records, series


def build_matrix(args, dag, records, series):
    window = dl.ObservationWindow(args.vot)
    return dl.build_features(records, dag, series, window,
                             grace_semesters=args.grace), window


# ------------------------------------------------------------------ commands

def cmd_synth(args, config):
    fields = {f.name for f in synth.SynthConfig.__dataclass_fields__.values()}
    overrides = {k: v for k, v in config.items() if k in fields}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = synth.SynthConfig(**overrides)
    dag = synth.default_curriculum()
    records, series, truth = synth.generate_cohort(cfg, dag)
    synth.write_dataset(args.out, records, series, truth, dag)
    print(f"synth: wrote {len(records)} students to {args.out}")
    return 0


def cmd_friction(args, config):
    data = Path(args.data)
    dag = cur.load_curriculum_csv(data / "curriculum.csv", data / "prereqs.csv")
    records = dl.load_students_csv(data / "students.csv", data / "attempts.csv")
    attempts = [a for r in records for a in r.attempts]
    if not attempts:
        raise NoAttempts("attempts file contains no attempts")
    table = cur.rank_friction(
        cur.friction_table(attempts, min_attempts=args.min_attempts), top_n=args.top)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rank, (code, ifc) in enumerate(table.entries, start=1):
        name = dag.courses[code].name if code in dag.courses else ""
        rows.append((rank, code, name, f"{ifc:.3f}"))
    write_csv(out / "friction.csv", ("rank", "code", "name", "ifc"), rows)
    print(f"friction: wrote {len(rows)} rows to {out / 'friction.csv'}")
    return 0


def cmd_features(args, config):
    dag, records, series = load_inputs(args)
    matrix, window = build_matrix(args, dag, records, series)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["student_id"] + matrix.column_names + ["lag", "velocity", "dropout"]
    rows = []
    for i, sid in enumerate(matrix.student_ids):
        rows.append([sid] + [_fmt(v) for v in matrix.values[i]]
                    + [_fmt(matrix.lag[i]), _fmt(matrix.velocity[i]), _fmt(matrix.dropout[i])])
    write_csv(out / "features.csv", header, rows)
    write_json(out / "features_meta.json", {
        "vot": window.vot_semesters,
        "grace": args.grace,
        "n": matrix.n,
        "censored": matrix.censored_ids,
        "layers": matrix.layers,
        "observation_semesters": matrix.observation_semesters,
        "imputation": matrix.imputation_notes,
    })
    print(f"features: wrote {matrix.n} rows to {out / 'features.csv'}")
    return 0


def _archetype_labels(matrix, args):
    cluster_cols = [c for c in matrix.column_names if not c.startswith("cohort_")]
    X = np.column_stack([matrix.controls(exclude=[c for c in matrix.column_names
                                                  if c.startswith("cohort_")]),
                         matrix.lag, matrix.velocity])
    names = cluster_cols + ["lag", "velocity"]
    cfg = arch.PipelineConfig(d=3, eps=args.eps, min_pts=args.min_pts)
    std, emb, labels = arch.run_pipeline(X, cfg)
    return X, names, cfg, std, emb, labels


def cmd_estimate(args, config):
    dag, records, series = load_inputs(args)
    matrix, window = build_matrix(args, dag, records, series)
    if args.archetype_subset is not None:
        _, _, _, _, _, labels = _archetype_labels(matrix, args)
        mask = labels.labels == args.archetype_subset
        if mask.sum() < 2 * args.k_folds:
            raise TooFewClusters(
                f"archetype {args.archetype_subset} has only {int(mask.sum())} rows")
        matrix = _subset_matrix(matrix, mask)
    spec = NuisanceSpec(lam=args.ridge_lambda)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    X = matrix.causal_controls()
    ate = run_dml(X, matrix.dropout, matrix.lag, K=args.k_folds, seed=args.seed,
                  spec=spec, estimand="ATE lag -> dropout")
    payload = ate.to_dict()
    payload.update({"seed": args.seed,
                    "spec": {"lambda": spec.lam, "standardize": spec.standardize}})
    write_json(out / "ate.json", payload)

    # Narrow velocity supports (e.g. a single archetype) can make the richer
    # bases rank deficient; retry with coarser ones before giving up.
    ladder = [(args.spline_degree, args.spline_knots), (1, 2), (1, 0), (0, 0)]
    curve = None
    for degree, knots in ladder:
        try:
            curve = run_cate(X, matrix.dropout, matrix.lag, matrix.velocity,
                             K=args.k_folds, seed=args.seed, spec=spec,
                             degree=degree, n_interior=knots)
            break
        except CollinearBasis:
            continue
    if curve is None:
        raise CollinearBasis("no spline basis of any order fits this velocity support")
    write_csv(out / "cate_grid.csv",
              ("velocity", "effect", "se", "lo95", "hi95"),
              [tuple(_fmt(x) for x in row) for row in curve.evaluation])

    placebo = None
    if args.placebo:
        base_year = min(r.cohort_year for r in records)
        kept = [r for r in records if r.student_id in set(matrix.student_ids)]
        placebo = align_exposure(series, kept, -1, window, base_year)
    report = mac.macro_report(matrix, placebo_exposure=placebo,
                              K=args.k_folds, seed=args.seed, spec=spec)
    write_json(out / "macro_report.json", report)
    print(f"estimate: ATE {ate.tau:.6g} (p {ate.p_value:.4g}), reports in {out}")
    return 0


def cmd_macro(args, config):
    dag, records, series = load_inputs(args)
    matrix, window = build_matrix(args, dag, records, series)
    spec = NuisanceSpec(lam=args.ridge_lambda)
    placebo = None
    if args.placebo:
        base_year = min(r.cohort_year for r in records)
        kept = [r for r in records if r.student_id in set(matrix.student_ids)]
        placebo = align_exposure(series, kept, -1, window, base_year)
    report = mac.macro_report(matrix, placebo_exposure=placebo,
                              K=args.k_folds, seed=args.seed, spec=spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "macro_report.json", report)
    print(f"macro: report in {out / 'macro_report.json'}")
    return 0


def _subset_matrix(matrix, mask):
    import copy

    sub = copy.copy(matrix)
    sub.student_ids = [s for s, keep in zip(matrix.student_ids, mask) if keep]
    sub.values = matrix.values[mask]
    sub.lag = matrix.lag[mask]
    sub.velocity = matrix.velocity[mask]
    sub.dropout = matrix.dropout[mask]
    return sub


def cmd_archetypes(args, config):
    dag, records, series = load_inputs(args)
    matrix, window = build_matrix(args, dag, records, series)
    X, names, cfg, std, emb, labels = _archetype_labels(matrix, args)
    if labels.n_clusters < 2:
        raise TooFewClusters(f"found {labels.n_clusters} clusters")
    diag = arch.diagnostics(emb, labels, std.values, seed=args.seed)
    ari_mean, ari_sd, B = arch.bootstrap_stability(X, cfg, args.bootstrap,
                                                   seed=args.seed,
                                                   reference_labels=labels.labels)
    perm_p = arch.permutation_test(X, cfg, args.permutations, seed=args.seed)
    kept_records = {r.student_id: r for r in records}
    aligned = [kept_records[s] for s in matrix.student_ids]
    profiles = arch.profile_archetypes(labels, aligned, matrix)
    clf = arch.train_classifier(X, labels, split_seed=args.seed, feature_names=names)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "archetype_report.json", {
        "n_clusters": labels.n_clusters,
        "eps": labels.eps,
        "min_pts": labels.min_pts,
        "labels": [int(v) for v in labels.labels],
        "diagnostics": diag.to_dict(),
        "stability": {"bootstrap_ari": {"mean": ari_mean, "sd": ari_sd, "B": B},
                      "permutation_p": perm_p, "P": args.permutations},
        "profiles": [p.to_dict() for p in profiles],
        "classifier": clf.to_dict(),
    })

    # normalized feature table for the heatmap
    mu, sd = X.mean(axis=0), X.std(axis=0)
    sd[sd == 0] = 1.0
    heat_rows = []
    for p in profiles:
        mask = labels.labels == p.archetype_id
        z = (X[mask].mean(axis=0) - mu) / sd
        heat_rows.append([p.archetype_id] + [_fmt(v) for v in z])
    write_csv(out / "heatmap.csv", ["archetype"] + names, heat_rows)

    kcurve, suggested = arch.kdistance(emb, min(args.min_pts, len(X) - 1))
    write_csv(out / "kdistance.csv", ("index", "kdistance"),
              [(i, _fmt(v)) for i, v in enumerate(kcurve)])
    write_csv(out / "elbow.csv", ("k", "inertia"),
              [(k, _fmt(v)) for k, v in diag.kmeans_elbow])
    for p in profiles:
        if p.archetype_id < 0:
            continue
        write_csv(out / f"arquetipo_{p.archetype_id}_perfil.csv",
                  ("metric", "value"),
                  [("size", p.size),
                   ("dropout_rate", _fmt(p.dropout_rate)),
                   ("libres_share", _fmt(p.libres_share)),
                   ("mean_grade", _fmt(p.mean_grade)),
                   ("mean_lag", _fmt(p.mean_lag)),
                   ("mean_velocity", _fmt(p.mean_velocity)),
                   ("risk_band", p.risk_band),
                   ("risk_label", arch.RISK_LABELS_ES[p.risk_band])])
    print(f"archetypes: {labels.n_clusters} clusters, reports in {out}")
    return 0


# --------------------------------------------------------------------- main

def build_parser():
    parser = argparse.ArgumentParser(prog="capire",
                                     description="Curriculum-aware causal analytics pipeline")
    parser.add_argument("--config", default=None, help="key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, macro_flags=True):
        p.add_argument("--data", default=".", help="input directory")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--vot", type=int, default=3)
        p.add_argument("--grace", type=int, default=4)
        if macro_flags:
            p.add_argument("--k-folds", dest="k_folds", type=int, default=5)
            p.add_argument("--lambda", dest="ridge_lambda", type=float, default=1.0)

    p = sub.add_parser("synth", help="generate a synthetic cohort dataset")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("friction", help="rank courses by friction coefficient")
    common(p, macro_flags=False)
    p.add_argument("--top", type=int, default=None)
    p.add_argument("--min-attempts", type=int, default=1)
    p.set_defaults(func=cmd_friction)

    p = sub.add_parser("features", help="build the leakage-guarded feature matrix")
    common(p, macro_flags=False)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("estimate", help="ATE/CATE and macro reports")
    common(p)
    p.add_argument("--placebo", action="store_true")
    p.add_argument("--archetype-subset", dest="archetype_subset", type=int, default=None)
    p.add_argument("--spline-degree", dest="spline_degree", type=int, default=3)
    p.add_argument("--spline-knots", dest="spline_knots", type=int, default=4)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--min-pts", dest="min_pts", type=int, default=5)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("macro", help="dual stressor report only")
    common(p)
    p.add_argument("--placebo", action="store_true")
    p.set_defaults(func=cmd_macro)

    p = sub.add_parser("archetypes", help="cluster trajectories and validate")
    common(p, macro_flags=False)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--min-pts", dest="min_pts", type=int, default=5)
    p.add_argument("--bootstrap", type=int, default=100)
    p.add_argument("--permutations", type=int, default=99)
    p.set_defaults(func=cmd_archetypes)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = read_config(args.config) if args.config else {}
        return args.func(args, config)
    except LeakageViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LEAKAGE
    except DegenerateTreatment as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except TooFewClusters as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CLUSTERING
    except (InputFormatError, ConfigInvalid, NoAttempts, FileNotFoundError, CapireError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
