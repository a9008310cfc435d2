"""Manual cross-fitted double-ML: ridge nuisances, residual-on-residual
final stage with HC1 sandwich inference, and spline-interaction conditional
effects over the velocity moderator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import BadK, CollinearBasis, DegenerateTreatment, KnotOutOfRange, SingularSystem

Z_95 = 1.96


@dataclass(frozen=True)
class FoldPlan:
    n: int
    K: int
    assignment: np.ndarray  # per-row fold index in [0, K)
    seed: int

    def fold_indices(self, k):
        return np.flatnonzero(self.assignment == k)


def kfold_split(n, K, seed) -> FoldPlan:
    """Deterministic shuffled partition into K folds with sizes differing by <= 1."""
    if not 2 <= K <= n:
        raise BadK(f"need 2 <= K <= n, got K={K}, n={n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    sizes = np.full(K, n // K)
    sizes[: n % K] += 1
    assignment = np.empty(n, dtype=np.int64)
    start = 0
    for k, size in enumerate(sizes):
        assignment[order[start:start + size]] = k
        start += size
    return FoldPlan(n=n, K=K, assignment=assignment, seed=seed)


@dataclass(frozen=True)
class NuisanceSpec:
    lam: float = 1.0
    standardize: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


class RidgeModel:
    """Ridge with unpenalized intercept; optional column standardization.

    Minimizes ||y - b0 - X b||^2 + lam * ||b_std||^2 where the penalty applies
    to the (standardized, when enabled) slope coefficients only.
    """

    def __init__(self, spec: NuisanceSpec):
        self.spec = spec
        self.intercept_ = 0.0
        self.coef_ = None

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        means = X.mean(axis=0)
        Xc = X - means
        scales = np.ones(X.shape[1])
        if self.spec.standardize:
            scales = Xc.std(axis=0)
        keep = scales > 0
        if self.spec.standardize:
            Xw = Xc[:, keep] / scales[keep]
        else:
            # zero-variance columns are identically zero after centering
            Xw = Xc[:, keep]
        ybar = y.mean()
        yc = y - ybar
        p = Xw.shape[1]
        if self.spec.lam == 0.0:
            if p and np.linalg.matrix_rank(Xw) < p:
                raise SingularSystem("rank-deficient design with lambda = 0")
            beta_w = np.linalg.lstsq(Xw, yc, rcond=None)[0] if p else np.empty(0)
        else:
            gram = Xw.T @ Xw + self.spec.lam * np.eye(p)
            beta_w = np.linalg.solve(gram, Xw.T @ yc) if p else np.empty(0)
        beta = np.zeros(X.shape[1])
        beta[keep] = beta_w / scales[keep] if self.spec.standardize else beta_w
        self.coef_ = beta
        self.intercept_ = ybar - means @ beta
        return self

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coef_ + self.intercept_


def fit_ridge(X, y, spec: NuisanceSpec) -> np.ndarray:
    """Coefficient vector [intercept, slopes...] of the penalized least squares fit."""
    model = RidgeModel(spec).fit(X, y)
    return np.concatenate([[model.intercept_], model.coef_])


@dataclass(frozen=True)
class Residuals:
    y_tilde: np.ndarray
    t_tilde: np.ndarray

    def __post_init__(self):
        if len(self.y_tilde) != len(self.t_tilde):
            raise ValueError("residual vectors must have the same length")


def crossfit_residuals(X, y, t, plan, spec) -> Residuals:
    """Out-of-fold nuisance residuals: row i is predicted by models that never saw it.

    plan=None is debug mode: nuisances fit once on the full sample (used to
    verify Frisch-Waugh-Lovell exactness, not for inference).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    if plan is None:
        y_hat = RidgeModel(spec).fit(X, y).predict(X)
        t_hat = RidgeModel(spec).fit(X, t).predict(X)
        return Residuals(y_tilde=y - y_hat, t_tilde=t - t_hat)
    if plan.n != len(y):
        raise ValueError("fold plan does not match sample size")
    y_tilde = np.empty_like(y)
    t_tilde = np.empty_like(t)
    for k in range(plan.K):
        test = plan.fold_indices(k)
        train = np.flatnonzero(plan.assignment != k)
        m_hat = RidgeModel(spec).fit(X[train], y[train])
        g_hat = RidgeModel(spec).fit(X[train], t[train])
        y_tilde[test] = y[test] - m_hat.predict(X[test])
        t_tilde[test] = t[test] - g_hat.predict(X[test])
    return Residuals(y_tilde=y_tilde, t_tilde=t_tilde)


@dataclass(frozen=True)
class DmlEstimate:
    estimand: str
    tau: float
    se: float
    p_value: float
    ci95: tuple
    n: int
    K: int

    def significant(self, alpha=0.05):
        return self.p_value < alpha

    def to_dict(self):
        return {
            "estimand": self.estimand,
            "tau": self.tau,
            "se": self.se,
            "p": self.p_value,
            "ci95": list(self.ci95),
            "n": self.n,
            "K": self.K,
        }


def _normal_two_sided_p(z):
    return float(math.erfc(abs(z) / math.sqrt(2.0)))


def estimate_ate(residuals, *, estimand="ATE", K=0, t_variance=None) -> DmlEstimate:
    """Final-stage residual-on-residual slope with HC1 sandwich inference.

    t_variance, when given, is the variance of the raw treatment; the estimate
    is refused as degenerate if cross-fitting removed (almost) all of it.
    """
    yt = np.asarray(residuals.y_tilde, dtype=float)
    tt = np.asarray(residuals.t_tilde, dtype=float)
    n = len(tt)
    stt = float(tt @ tt)
    var_tt = stt / n
    if t_variance is not None and t_variance > 0 and var_tt / t_variance < 1e-6:
        raise DegenerateTreatment("treatment residual variance vanished after partialling out")
    if var_tt <= 1e-300:
        raise DegenerateTreatment("treatment residual has no variation")
    tau = float(yt @ tt) / stt
    eps = yt - tau * tt
    meat = float((tt * eps) @ (tt * eps))
    se = math.sqrt(max(n / max(n - 1, 1) * meat / stt**2, 0.0))
    z = tau / se if se > 0 else math.inf * np.sign(tau) if tau else 0.0
    p = _normal_two_sided_p(z) if se > 0 else (0.0 if tau else 1.0)
    return DmlEstimate(estimand=estimand, tau=tau, se=se, p_value=p,
                       ci95=(tau - Z_95 * se, tau + Z_95 * se), n=n, K=K)


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis over a fixed data range."""

    degree: int
    knot_vector: np.ndarray

    @property
    def n_columns(self):
        return len(self.knot_vector) - self.degree - 1

    @property
    def interior_knots(self):
        return self.knot_vector[self.degree + 1: -(self.degree + 1)]

    def design_matrix(self, v):
        v = np.clip(np.asarray(v, dtype=float),
                    self.knot_vector[0], self.knot_vector[-1])
        return BSpline.design_matrix(v, self.knot_vector, self.degree).toarray()


def make_basis(v, degree=3, interior_knots=None, n_interior=4) -> BSplineBasis:
    """Build a clamped basis over the observed range of v.

    interior_knots=None places n_interior knots at evenly spaced quantiles.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("v must be non-empty")
    lo, hi = float(v.min()), float(v.max())
    if interior_knots is None:
        qs = np.linspace(0, 1, n_interior + 2)[1:-1]
        interior = np.unique(np.quantile(v, qs))
        interior = interior[(interior > lo) & (interior < hi)]
    else:
        interior = np.asarray(interior_knots, dtype=float)
        if np.any(np.diff(interior) <= 0):
            raise KnotOutOfRange("interior knots must be strictly increasing")
        if interior.size and (interior[0] <= lo or interior[-1] >= hi):
            raise KnotOutOfRange(
                f"interior knots must lie strictly inside ({lo}, {hi})")
    if hi <= lo:
        # constant moderator: single intercept column via a degree-0 basis
        knots = np.array([lo, lo + 1.0])
        return BSplineBasis(degree=0, knot_vector=knots)
    knots = np.concatenate([[lo] * (degree + 1), interior, [hi] * (degree + 1)])
    return BSplineBasis(degree=degree, knot_vector=knots)


def spline_basis(v, degree=3, interior_knots=None) -> np.ndarray:
    """B-spline design matrix of `v`; rows form a partition of unity."""
    return make_basis(v, degree=degree, interior_knots=interior_knots).design_matrix(v)


@dataclass(frozen=True)
class InteractionResiduals:
    """Cross-fit residuals for the heterogeneous stage: the outcome and every
    treatment-by-basis column partialled out on the controls."""

    y_tilde: np.ndarray
    d_tilde: np.ndarray  # (n, k)


def crossfit_cate_residuals(X, y, t, basis_matrix, plan, spec) -> InteractionResiduals:
    """Residualize y and each column of t * basis on the controls, out of fold.

    Residualizing the interaction columns jointly (rather than t alone) keeps
    the spline coefficients consistent even when the moderator is a
    deterministic transform of the treatment, which is exactly the situation
    for velocity and lag.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    D = t[:, None] * np.asarray(basis_matrix, dtype=float)
    if plan is None:
        y_tilde = y - RidgeModel(spec).fit(X, y).predict(X)
        d_tilde = np.column_stack([
            D[:, j] - RidgeModel(spec).fit(X, D[:, j]).predict(X)
            for j in range(D.shape[1])
        ])
        return InteractionResiduals(y_tilde=y_tilde, d_tilde=d_tilde)
    y_tilde = np.empty_like(y)
    d_tilde = np.empty_like(D)
    for k in range(plan.K):
        test = plan.fold_indices(k)
        train = np.flatnonzero(plan.assignment != k)
        y_tilde[test] = y[test] - RidgeModel(spec).fit(X[train], y[train]).predict(X[test])
        for j in range(D.shape[1]):
            model = RidgeModel(spec).fit(X[train], D[train, j])
            d_tilde[test, j] = D[test, j] - model.predict(X[test])
    return InteractionResiduals(y_tilde=y_tilde, d_tilde=d_tilde)


@dataclass(frozen=True)
class CateCurve:
    knots: np.ndarray
    coefficients: np.ndarray
    evaluation: list  # (velocity, effect, se, lo95, hi95)
    basis: BSplineBasis = field(repr=False, default=None)
    covariance: np.ndarray = field(repr=False, default=None)

    def effect_at(self, v):
        b = self.basis.design_matrix(np.atleast_1d(v))
        return b @ self.coefficients


def estimate_cate(residuals, basis, velocity, grid_size=20) -> CateCurve:
    """Fit CATE(v) = basis(v) . theta with pointwise HC1 standard errors.

    `residuals` is either InteractionResiduals (preferred: every interaction
    column partialled out) or plain Residuals, in which case the design is
    t_tilde times the basis. The two coincide when the basis is a single
    constant column, where the fit reproduces estimate_ate exactly.
    """
    yt = np.asarray(residuals.y_tilde, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    if isinstance(basis, np.ndarray):
        B = basis
        basis_obj = None
    else:
        basis_obj = basis
        B = basis.design_matrix(velocity)
    if B.shape[0] != len(yt):
        raise ValueError("basis rows must match the sample size")
    if isinstance(residuals, InteractionResiduals):
        D = np.asarray(residuals.d_tilde, dtype=float)
        if D.shape != B.shape:
            raise ValueError("interaction residuals do not match the basis shape")
    else:
        D = np.asarray(residuals.t_tilde, dtype=float)[:, None] * B
    gram = D.T @ D
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise CollinearBasis("treatment-by-basis design is rank deficient")
    gram_inv = np.linalg.inv(gram)
    theta = gram_inv @ (D.T @ yt)
    eps = yt - D @ theta
    n, k = D.shape
    meat = D.T @ (D * (eps**2)[:, None])
    cov = gram_inv @ meat @ gram_inv * (n / max(n - k, 1))
    grid = np.linspace(velocity.min(), velocity.max(), grid_size)
    Bg = basis_obj.design_matrix(grid) if basis_obj is not None else B[:grid_size]
    if basis_obj is None:
        grid = velocity[:grid_size]
    effects = Bg @ theta
    ses = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", Bg, cov, Bg), 0.0))
    evaluation = [
        (float(v), float(e), float(s), float(e - Z_95 * s), float(e + Z_95 * s))
        for v, e, s in zip(grid, effects, ses)
    ]
    knots = basis_obj.interior_knots if basis_obj is not None else np.empty(0)
    return CateCurve(knots=np.asarray(knots), coefficients=theta,
                     evaluation=evaluation, basis=basis_obj, covariance=cov)


def placebo_test(X, y, pseudo_treatment, plan, spec, *, estimand="placebo") -> DmlEstimate:
    """Run the full pipeline with a pseudo-treatment; expected to be null."""
    pseudo_treatment = np.asarray(pseudo_treatment, dtype=float)
    res = crossfit_residuals(X, y, pseudo_treatment, plan, spec)
    return estimate_ate(res, estimand=estimand, K=plan.K if plan is not None else 0,
                        t_variance=float(pseudo_treatment.var()))


def run_cate(X, y, t, velocity, *, K=5, seed=42, spec=None, degree=3,
             interior_knots=None, n_interior=4, grid_size=20) -> CateCurve:
    """Full conditional-effect pipeline: basis over the observed velocity
    range, joint cross-fit residualization, spline-coefficient fit."""
    spec = spec or NuisanceSpec()
    velocity = np.asarray(velocity, dtype=float)
    basis = make_basis(velocity, degree=degree, interior_knots=interior_knots,
                       n_interior=n_interior)
    plan = kfold_split(len(velocity), K, seed)
    res = crossfit_cate_residuals(X, y, t, basis.design_matrix(velocity), plan, spec)
    return estimate_cate(res, basis, velocity, grid_size=grid_size)


def run_dml(X, y, t, *, K=5, seed=42, spec=None, estimand="ATE", debug_full_sample=False):
    """Convenience wrapper: fold plan, cross-fit, final stage."""
    spec = spec or NuisanceSpec()
    t = np.asarray(t, dtype=float)
    plan = None if debug_full_sample else kfold_split(len(t), K, seed)
    res = crossfit_residuals(X, y, t, plan, spec)
    return estimate_ate(res, estimand=estimand, K=0 if plan is None else K,
                        t_variance=float(t.var()))
