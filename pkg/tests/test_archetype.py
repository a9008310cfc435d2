"""Clustering pipeline against brute-force and library oracles."""

import numpy as np
import pytest
from sklearn.cluster import DBSCAN as SkDBSCAN
from sklearn.metrics import adjusted_rand_score
from sklearn.metrics import silhouette_samples as sk_silhouette_samples

from capire import archetype as arch
from capire.errors import (AllColumnsDegenerate, BadDimension, BadK,
                           SingleClass, TooFewClusters)


# ------------------------------------------------------------- standardize

def test_standardize_zero_mean_unit_variance():
    rng = np.random.default_rng(0)
    X = rng.normal(loc=5.0, scale=3.0, size=(50, 4))
    std = arch.standardize(X)
    assert std.values.mean(axis=0) == pytest.approx(np.zeros(4), abs=1e-12)
    assert std.values.std(axis=0) == pytest.approx(np.ones(4), abs=1e-12)


def test_standardize_drops_constant_columns():
    rng = np.random.default_rng(1)
    X = np.column_stack([rng.normal(size=30), np.full(30, 2.0)])
    std = arch.standardize(X, column_names=["a", "b"])
    assert std.values.shape[1] == 1
    assert any("b" in w for w in std.warnings)
    with pytest.raises(AllColumnsDegenerate):
        arch.standardize(np.full((10, 3), 1.0))


# ------------------------------------------------------------------ PCA

def test_pca_matches_eigendecomposition_oracle():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(80, 6)) @ np.diag([5, 3, 2, 1, 0.5, 0.1])
    Xc = X - X.mean(axis=0)
    emb = arch.embed_pca(Xc, d=3)
    comps = arch.pca_components(Xc, d=3)
    # oracle: eigenvectors of the covariance matrix
    w, V = np.linalg.eigh(Xc.T @ Xc / (len(X) - 1))
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    for j in range(3):
        # same axis up to sign
        dot = abs(V[:, j] @ comps[j])
        assert dot == pytest.approx(1.0, abs=1e-8)
    total = w.sum()
    assert emb.explained_variance == pytest.approx(w[:3] / total, abs=1e-8)
    assert emb.coordinates == pytest.approx(Xc @ comps.T, abs=1e-8)


def test_pca_sign_convention_is_deterministic():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 5))
    a = arch.embed_pca(X, d=2)
    b = arch.embed_pca(X.copy(), d=2)
    assert np.array_equal(a.coordinates, b.coordinates)
    # convention: the largest-magnitude loading of each component is positive
    for comp in arch.pca_components(X, d=2):
        assert comp[np.argmax(np.abs(comp))] > 0


def test_pca_dimension_bounds():
    X = np.random.default_rng(4).normal(size=(10, 3))
    with pytest.raises(BadDimension):
        arch.embed_pca(X, d=1)
    with pytest.raises(BadDimension):
        arch.embed_pca(X, d=4)


# ------------------------------------------------------------- k-distance

def test_kdistance_matches_brute_force():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(25, 3))
    curve, suggested = arch.kdistance(X, k=4)
    # brute-force oracle
    dists = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    kth = np.sort(np.sort(dists, axis=1)[:, 4])
    assert curve == pytest.approx(kth, abs=1e-12)
    assert curve.min() <= suggested <= curve.max()
    with pytest.raises(BadK):
        arch.kdistance(X, k=25)


# ------------------------------------------------------------------ DBSCAN

def test_dbscan_partition_matches_sklearn(blob_data):
    X, _ = blob_data
    for eps, min_pts in ((0.8, 4), (1.5, 5), (3.0, 8)):
        ours = arch.dbscan(X, eps, min_pts)
        theirs = SkDBSCAN(eps=eps, min_samples=min_pts).fit_predict(X)
        ours_noise = ours.labels == arch.NOISE
        assert np.array_equal(ours_noise, theirs == -1)
        core = ~ours_noise
        if core.any():
            assert adjusted_rand_score(ours.labels[core], theirs[core]) == 1.0


def test_dbscan_recovers_planted_blobs(blob_data):
    X, truth = blob_data
    labels = arch.dbscan(X, eps=5.0, min_pts=5)
    assert labels.n_clusters == 3
    assert (labels.labels != arch.NOISE).all()
    assert adjusted_rand_score(labels.labels, truth) == 1.0


# --------------------------------------------------------------- silhouette

def brute_force_silhouette(X, labels):
    """O(n^2) textbook definition, written independently of the implementation."""
    n = len(X)
    vals = np.zeros(n)
    for i in range(n):
        same = [j for j in range(n) if j != i and labels[j] == labels[i]]
        if not same:
            vals[i] = 0.0
            continue
        a = np.mean([np.linalg.norm(X[i] - X[j]) for j in same])
        b = min(
            np.mean([np.linalg.norm(X[i] - X[j]) for j in range(n) if labels[j] == c])
            for c in set(labels) if c != labels[i]
        )
        vals[i] = (b - a) / max(a, b)
    return vals


def test_silhouette_matches_brute_force_oracle():
    rng = np.random.default_rng(6)
    X = np.vstack([rng.normal(0, 1, (10, 2)), rng.normal(5, 1, (10, 2))])
    labels = np.repeat([0, 1], 10)
    ours = arch.silhouette_samples(X, labels)
    oracle = brute_force_silhouette(X, labels)
    assert ours == pytest.approx(oracle, abs=1e-10)
    assert ours == pytest.approx(sk_silhouette_samples(X, labels), abs=1e-10)


def test_silhouette_needs_two_clusters():
    X = np.random.default_rng(7).normal(size=(10, 2))
    with pytest.raises(TooFewClusters):
        arch.silhouette_score(X, np.zeros(10, dtype=int))


# ------------------------------------------------------------- diagnostics

def test_diagnostics_on_blobs(blob_data):
    X, truth = blob_data
    std = arch.standardize(X)
    labels = arch.ClusterLabels(labels=truth, eps=0.0, min_pts=0)
    diag = arch.diagnostics(std.values, labels, std.values, seed=0)
    assert diag.silhouette > 0.6
    assert diag.davies_bouldin < 0.6
    assert diag.calinski_harabasz > 100
    assert [k for k, _ in diag.kmeans_elbow] == list(range(2, 9))
    inertias = [v for _, v in diag.kmeans_elbow]
    assert all(a >= b - 1e-9 for a, b in zip(inertias, inertias[1:]))


# --------------------------------------------------------------- stability

def test_bootstrap_stability_high_on_blobs(blob_data):
    X, _ = blob_data
    cfg = arch.PipelineConfig(d=3, eps=None, min_pts=5)
    mean, sd, B = arch.bootstrap_stability(X, cfg, 20, seed=0)
    assert B == 20 and mean > 0.9 and sd >= 0.0


def test_permutation_test_minimal_p_on_blobs(blob_data):
    X, _ = blob_data
    cfg = arch.PipelineConfig(d=3, eps=None, min_pts=5)
    p = arch.permutation_test(X, cfg, 19, seed=0)
    assert p == pytest.approx(1 / 20)
    with pytest.raises(ValueError):
        arch.permutation_test(X, cfg, 5, seed=0)


# ----------------------------------------------------------------- profiles

def test_risk_bands():
    assert arch.risk_band(0.9) == "high"
    assert arch.risk_band(0.6) == "high"
    assert arch.risk_band(0.45) == "moderate"
    assert arch.risk_band(0.1) == "low"


def test_profile_archetypes_from_matrix(synth_bundle):
    m = synth_bundle["matrix"]
    rng = np.random.default_rng(8)
    labels = arch.ClusterLabels(labels=rng.integers(0, 2, m.n), eps=1.0, min_pts=3)
    profiles = arch.profile_archetypes(labels, None, m)
    assert {p.archetype_id for p in profiles} == {0, 1}
    assert sum(p.size for p in profiles) == m.n
    for p in profiles:
        mask = labels.labels == p.archetype_id
        assert p.dropout_rate == pytest.approx(m.dropout[mask].mean())
        assert p.risk_band == arch.risk_band(p.dropout_rate)
        assert "risk_label" in p.to_dict()


# ---------------------------------------------------------------- classifier

def test_classifier_separates_blobs(blob_data):
    X, truth = blob_data
    labels = arch.ClusterLabels(labels=truth, eps=0.0, min_pts=0)
    report = arch.train_classifier(X, labels, split_seed=0,
                                   feature_names=[f"x{i}" for i in range(5)])
    assert report.accuracy >= 0.95
    assert report.confusion_matrix.sum() == int(round(0.3 * len(X)))
    assert len(report.feature_importance) == 5
    with pytest.raises(SingleClass):
        arch.train_classifier(X, arch.ClusterLabels(np.zeros(len(X), dtype=int), 0.0, 0))


# ----------------------------------------------------------------- pipeline

def test_run_pipeline_end_to_end(blob_data):
    X, truth = blob_data
    cfg = arch.PipelineConfig(d=3, eps=1.0, min_pts=5)
    std, emb, labels = arch.run_pipeline(X, cfg)
    assert labels.n_clusters == 3
    # standardization preserves blob geometry: perfect recovery
    assert adjusted_rand_score(labels.labels, truth) == 1.0
