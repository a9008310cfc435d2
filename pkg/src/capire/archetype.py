"""Trajectory archetype discovery and validation.

Standardize -> low-dimensional embedding (PCA default, pluggable) -> DBSCAN,
then quality diagnostics, bootstrap/permutation stability, per-archetype
profiles and a supervised back-prediction classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import (adjusted_rand_score, calinski_harabasz_score,
                             davies_bouldin_score)
from sklearn.model_selection import train_test_split
from sklearn.multiclass import OneVsRestClassifier

from .errors import (AllColumnsDegenerate, BadDimension, BadK, SingleClass,
                     TooFewClusters)

NOISE = -1

RISK_LABELS_ES = {"high": "Alto Riesgo", "moderate": "Riesgo Moderado", "low": "Bajo Riesgo"}


@dataclass(frozen=True)
class Standardization:
    values: np.ndarray
    kept_indices: np.ndarray
    dropped: list  # names (or indices) of zero-variance columns
    warnings: list


def standardize(matrix, column_names=None) -> Standardization:
    """Center and scale to unit variance, dropping zero-variance columns."""
    X = np.asarray(matrix, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("standardize needs at least 2 rows")
    std = X.std(axis=0)
    keep = np.flatnonzero(std > 0)
    if keep.size == 0:
        raise AllColumnsDegenerate("every column has zero variance")
    names = column_names or [str(i) for i in range(X.shape[1])]
    dropped = [names[i] for i in range(X.shape[1]) if std[i] == 0]
    warnings = [f"dropped zero-variance column {name}" for name in dropped]
    Z = (X[:, keep] - X[:, keep].mean(axis=0)) / std[keep]
    return Standardization(values=Z, kept_indices=keep, dropped=dropped, warnings=warnings)


@dataclass(frozen=True)
class Embedding:
    coordinates: np.ndarray  # (n, d)
    method: str
    explained_variance: np.ndarray = field(default=None)


def embed_pca(matrix, d=3) -> Embedding:
    """Project onto the top-d principal components (SVD, deterministic signs)."""
    X = np.asarray(matrix, dtype=float)
    n, p = X.shape
    if not 2 <= d <= min(n, p):
        raise BadDimension(f"need 2 <= d <= min(n, p) = {min(n, p)}, got {d}")
    Xc = X - X.mean(axis=0)
    U, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    # fix component signs so output is reproducible across SVD backends
    signs = np.sign(Vt[np.arange(len(S)), np.abs(Vt).argmax(axis=1)])
    signs[signs == 0] = 1.0
    Vt = Vt * signs[:, None]
    total = float((S**2).sum())
    ratios = (S**2) / total if total > 0 else np.zeros_like(S)
    return Embedding(coordinates=Xc @ Vt[:d].T, method="pca",
                     explained_variance=ratios[:d])


def pca_components(matrix, d=3):
    """Principal axes (rows), matching embed_pca's sign convention."""
    X = np.asarray(matrix, dtype=float)
    Xc = X - X.mean(axis=0)
    _, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    signs = np.sign(Vt[np.arange(len(S)), np.abs(Vt).argmax(axis=1)])
    signs[signs == 0] = 1.0
    return (Vt * signs[:, None])[:d]


def _pairwise_distances(X):
    sq = np.sum(X**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def kdistance(embedding, k):
    """Ascending distances to each point's k-th nearest neighbor, plus a
    suggested eps at the point of maximum curvature (largest distance from
    the chord of the sorted curve). The suggestion is a heuristic; override it
    whenever the geometry is known better.
    """
    X = embedding.coordinates if isinstance(embedding, Embedding) else np.asarray(embedding)
    n = len(X)
    if not 1 <= k < n:
        raise BadK(f"need 1 <= k < n = {n}, got {k}")
    D = _pairwise_distances(X)
    kth = np.sort(D, axis=1)[:, k]  # column 0 is the self-distance
    curve = np.sort(kth)
    suggested = _elbow_of(curve)
    return curve, suggested


def _elbow_of(curve):
    n = len(curve)
    if n < 3 or curve[-1] == curve[0]:
        return float(curve[-1])
    x = np.arange(n, dtype=float)
    chord = curve[0] + (curve[-1] - curve[0]) * x / (n - 1)
    return float(curve[int(np.argmax(chord - curve))])


@dataclass(frozen=True)
class ClusterLabels:
    labels: np.ndarray  # >= 0 per cluster, NOISE (-1) otherwise
    eps: float
    min_pts: int

    @property
    def n_clusters(self):
        return int(self.labels.max() + 1) if (self.labels >= 0).any() else 0


def dbscan(embedding, eps, min_pts) -> ClusterLabels:
    """Density clustering with deterministic index-order core expansion."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    X = embedding.coordinates if isinstance(embedding, Embedding) else np.asarray(embedding)
    n = len(X)
    D = _pairwise_distances(X)
    neighbor_mask = D <= eps
    neighbor_counts = neighbor_mask.sum(axis=1)  # includes the point itself
    core = neighbor_counts >= min_pts
    labels = np.full(n, NOISE, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        frontier = [i]
        while frontier:
            p = frontier.pop()
            for q in np.flatnonzero(neighbor_mask[p]):
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        frontier.append(q)
        cluster += 1
    return ClusterLabels(labels=labels, eps=float(eps), min_pts=int(min_pts))


def silhouette_samples(X, labels):
    """Per-point silhouette values on euclidean distances (no noise handling)."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise TooFewClusters("silhouette needs at least 2 clusters")
    D = _pairwise_distances(X)
    n = len(X)
    sizes = {c: int((labels == c).sum()) for c in uniq}
    s = np.zeros(n)
    mean_to = {c: D[:, labels == c].sum(axis=1) for c in uniq}
    for i in range(n):
        c = labels[i]
        if sizes[c] == 1:
            s[i] = 0.0
            continue
        a = mean_to[c][i] / (sizes[c] - 1)
        b = min(mean_to[o][i] / sizes[o] for o in uniq if o != c)
        s[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return s


def silhouette_score(X, labels):
    return float(silhouette_samples(X, labels).mean())


@dataclass(frozen=True)
class ClusterDiagnostics:
    silhouette: float
    davies_bouldin: float
    calinski_harabasz: float
    kmeans_elbow: list  # (k, inertia)

    def to_dict(self):
        return {
            "silhouette": self.silhouette,
            "davies_bouldin": self.davies_bouldin,
            "calinski_harabasz": self.calinski_harabasz,
            "kmeans_elbow": [[int(k), float(v)] for k, v in self.kmeans_elbow],
        }


def diagnostics(embedding, cluster_labels, standardized=None, k_max=8, seed=0) -> ClusterDiagnostics:
    """Standard cluster quality scores on non-noise points, plus a k-means
    elbow computed on the standardized matrix (fixed-seed initialization)."""
    X = embedding.coordinates if isinstance(embedding, Embedding) else np.asarray(embedding)
    labels = cluster_labels.labels if isinstance(cluster_labels, ClusterLabels) else np.asarray(cluster_labels)
    mask = labels != NOISE
    kept, kept_labels = X[mask], labels[mask]
    if len(np.unique(kept_labels)) < 2:
        raise TooFewClusters("diagnostics need >= 2 non-noise clusters")
    elbow_data = standardized if standardized is not None else X
    elbow = []
    for k in range(2, min(k_max, len(elbow_data) - 1) + 1):
        km = KMeans(n_clusters=k, n_init=10, random_state=seed).fit(elbow_data)
        elbow.append((k, float(km.inertia_)))
    return ClusterDiagnostics(
        silhouette=silhouette_score(kept, kept_labels),
        davies_bouldin=float(davies_bouldin_score(kept, kept_labels)),
        calinski_harabasz=float(calinski_harabasz_score(kept, kept_labels)),
        kmeans_elbow=elbow,
    )


@dataclass(frozen=True)
class PipelineConfig:
    """Standardize -> embed -> DBSCAN configuration."""

    d: int = 3
    eps: float = None  # None: k-distance curvature heuristic with k = min_pts
    min_pts: int = 5
    embed: callable = None  # pluggable; defaults to PCA

    def embedder(self):
        return self.embed if self.embed is not None else embed_pca


def run_pipeline(matrix, config: PipelineConfig):
    """Full clustering pass; returns (standardization, embedding, labels)."""
    std = standardize(matrix)
    d = min(config.d, *std.values.shape)
    emb = config.embedder()(std.values, d=max(d, 2))
    if config.eps is None:
        k = min(config.min_pts, len(std.values) - 1)
        _, eps = kdistance(emb, k)
        eps = eps if eps > 0 else 1e-12
    else:
        eps = config.eps
    labels = dbscan(emb, eps, config.min_pts)
    return std, emb, labels


@dataclass(frozen=True)
class StabilityReport:
    bootstrap_ari_mean: float
    bootstrap_ari_sd: float
    B: int
    permutation_p: float
    P: int

    def to_dict(self):
        return {
            "bootstrap_ari": {"mean": self.bootstrap_ari_mean,
                              "sd": self.bootstrap_ari_sd, "B": self.B},
            "permutation_p": self.permutation_p,
            "P": self.P,
        }


def bootstrap_stability(matrix, config, B, seed=0, reference_labels=None):
    """Re-run the pipeline on B bootstrap resamples; ARI against the reference
    labels, computed over points retained (non-noise) in both labelings."""
    if B < 10:
        raise ValueError("B must be >= 10")
    X = np.asarray(matrix, dtype=float)
    if reference_labels is None:
        reference_labels = run_pipeline(X, config)[2].labels
    rng = np.random.default_rng(seed)
    n = len(X)
    aris = np.empty(B)
    for b in range(B):
        idx = rng.integers(0, n, n)
        boot_labels = run_pipeline(X[idx], config)[2].labels
        ref = reference_labels[idx]
        mask = (ref != NOISE) & (boot_labels != NOISE)
        if mask.sum() >= 2:
            aris[b] = adjusted_rand_score(ref[mask], boot_labels[mask])
        else:
            aris[b] = 0.0
    return float(aris.mean()), float(aris.std()), B


def permutation_test(matrix, config, P, seed=0):
    """Column-independent permutations break joint structure; p-value is the
    share of permuted silhouettes at least as large as the observed one."""
    if P < 19:
        raise ValueError("P must be >= 19")
    X = np.asarray(matrix, dtype=float)
    observed = _pipeline_silhouette(X, config)
    if observed is None:
        raise TooFewClusters("observed clustering has < 2 clusters")
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(P):
        perm = np.column_stack([rng.permutation(X[:, j]) for j in range(X.shape[1])])
        score = _pipeline_silhouette(perm, config)
        if score is not None and score >= observed:
            exceed += 1
    return (1 + exceed) / (P + 1)


def _pipeline_silhouette(X, config):
    try:
        std, emb, labels = run_pipeline(X, config)
    except AllColumnsDegenerate:
        return None
    mask = labels.labels != NOISE
    if len(np.unique(labels.labels[mask])) < 2:
        return None
    return silhouette_score(emb.coordinates[mask], labels.labels[mask])


@dataclass(frozen=True)
class ArchetypeProfile:
    archetype_id: int
    size: int
    dropout_rate: float
    libres_share: float
    mean_grade: float
    mean_lag: float
    mean_velocity: float
    risk_band: str

    def to_dict(self):
        return {
            "archetype_id": self.archetype_id,
            "size": self.size,
            "dropout_rate": self.dropout_rate,
            "libres_share": self.libres_share,
            "mean_grade": self.mean_grade,
            "mean_lag": self.mean_lag,
            "mean_velocity": self.mean_velocity,
            "risk_band": self.risk_band,
            "risk_label": RISK_LABELS_ES[self.risk_band],
        }


def risk_band(dropout_rate, thresholds=(0.6, 0.4)):
    high, moderate = thresholds
    if dropout_rate >= high:
        return "high"
    if dropout_rate >= moderate:
        return "moderate"
    return "low"


def profile_archetypes(labels, records, matrix, thresholds=(0.6, 0.4)):
    """Per-cluster aggregates. Libre share and mean grade are pooled over the
    cluster's attempts when records are given, else read from matrix columns.
    Noise points are profiled separately under id -1."""
    lab = labels.labels if isinstance(labels, ClusterLabels) else np.asarray(labels)
    profiles = []
    ids = sorted(int(c) for c in np.unique(lab))
    for c in ids:
        mask = lab == c
        idx = np.flatnonzero(mask)
        if records is not None:
            attempts = [a for i in idx for a in records[i].attempts]
            libres = sum(a.outcome == "libre" for a in attempts)
            libres_share = libres / len(attempts) if attempts else 0.0
            grades = [a.grade for a in attempts if a.grade is not None]
            mean_grade = float(np.mean(grades)) if grades else 0.0
        else:
            libres_share = float(matrix.column("libres_share")[mask].mean())
            mean_grade = float(matrix.column("early_grade_mean")[mask].mean())
        rate = float(matrix.dropout[mask].mean())
        profiles.append(ArchetypeProfile(
            archetype_id=c,
            size=int(mask.sum()),
            dropout_rate=rate,
            libres_share=libres_share,
            mean_grade=mean_grade,
            mean_lag=float(matrix.lag[mask].mean()),
            mean_velocity=float(matrix.velocity[mask].mean()),
            risk_band=risk_band(rate, thresholds),
        ))
    return profiles


@dataclass(frozen=True)
class ClassifierReport:
    classes: list
    confusion_matrix: np.ndarray  # rows true, columns predicted
    accuracy: float
    feature_importance: list  # (feature_name, mean accuracy drop)

    def to_dict(self):
        return {
            "classes": [int(c) for c in self.classes],
            "confusion_matrix": self.confusion_matrix.tolist(),
            "accuracy": self.accuracy,
            "feature_importance": [[name, float(v)] for name, v in self.feature_importance],
        }


def train_classifier(matrix, labels, split_seed=0, feature_names=None,
                     n_permutations=10) -> ClassifierReport:
    """One-vs-rest logistic back-prediction of archetype labels from the
    original (pre-embedding) features; importance is the mean held-out
    accuracy drop over per-feature permutations."""
    X = np.asarray(matrix, dtype=float)
    lab = labels.labels if isinstance(labels, ClusterLabels) else np.asarray(labels)
    mask = lab != NOISE
    X, lab = X[mask], lab[mask]
    classes = np.unique(lab)
    if len(classes) < 2:
        raise SingleClass("classifier needs at least 2 archetypes")
    X_tr, X_te, y_tr, y_te = train_test_split(
        X, lab, test_size=0.3, random_state=split_seed, stratify=lab)
    clf = OneVsRestClassifier(LogisticRegression(max_iter=2000))
    clf.fit(X_tr, y_tr)
    pred = clf.predict(X_te)
    accuracy = float((pred == y_te).mean())
    class_pos = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_te, pred):
        cm[class_pos[t], class_pos[p]] += 1
    names = feature_names or [f"f{j}" for j in range(X.shape[1])]
    rng = np.random.default_rng(split_seed)
    importance = []
    for j, name in enumerate(names):
        drops = np.empty(n_permutations)
        for r in range(n_permutations):
            Xp = X_te.copy()
            Xp[:, j] = rng.permutation(Xp[:, j])
            drops[r] = accuracy - (clf.predict(Xp) == y_te).mean()
        importance.append((name, float(drops.mean())))
    return ClassifierReport(classes=list(classes), confusion_matrix=cm,
                            accuracy=accuracy, feature_importance=importance)
