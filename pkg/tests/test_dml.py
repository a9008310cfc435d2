"""Cross-fitted estimator against closed-form oracles: ridge normal equations,
Frisch-Waugh-Lovell, HC1 sandwich, spline partition of unity."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capire.dml import (BSplineBasis, NuisanceSpec, Residuals, RidgeModel,
                        crossfit_cate_residuals, crossfit_residuals,
                        estimate_ate, estimate_cate, fit_ridge, kfold_split,
                        make_basis, placebo_test, run_cate, run_dml,
                        spline_basis)
from capire.errors import (BadK, CollinearBasis, DegenerateTreatment,
                           KnotOutOfRange, SingularSystem)

RNG = np.random.default_rng(123)


def make_linear_data(n=400, p=5, tau=0.7, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    t = X @ rng.normal(size=p) * 0.5 + rng.normal(size=n)
    y = tau * t + X @ rng.normal(size=p) + rng.normal(size=n)
    return X, y, t


# ------------------------------------------------------------------ folds

def test_kfold_split_partitions_evenly():
    plan = kfold_split(103, 5, seed=1)
    sizes = [len(plan.fold_indices(k)) for k in range(5)]
    assert sorted(sizes) == [20, 20, 21, 21, 21]
    assert np.sort(np.concatenate([plan.fold_indices(k) for k in range(5)])).tolist() \
        == list(range(103))


def test_kfold_split_deterministic_and_bounds():
    a = kfold_split(50, 4, seed=9).assignment
    b = kfold_split(50, 4, seed=9).assignment
    assert np.array_equal(a, b)
    with pytest.raises(BadK):
        kfold_split(10, 1, seed=0)
    with pytest.raises(BadK):
        kfold_split(3, 4, seed=0)


# ------------------------------------------------------------------ ridge

def test_ridge_matches_normal_equations_oracle():
    """Independent oracle: augment the standardized design and solve directly."""
    rng = np.random.default_rng(4)
    X = rng.normal(size=(60, 4)) * [1.0, 10.0, 0.1, 3.0]
    y = rng.normal(size=60)
    lam = 2.5
    model = RidgeModel(NuisanceSpec(lam=lam)).fit(X, y)

    mu, sd = X.mean(axis=0), X.std(axis=0)
    Z = (X - mu) / sd
    beta_std = np.linalg.solve(Z.T @ Z + lam * np.eye(4), Z.T @ (y - y.mean()))
    beta = beta_std / sd
    assert model.coef_ == pytest.approx(beta, abs=1e-10)
    assert model.intercept_ == pytest.approx(y.mean() - mu @ beta, abs=1e-10)


def test_ridge_lambda_zero_equals_ols():
    X, y, _ = make_linear_data(seed=2)
    model = RidgeModel(NuisanceSpec(lam=0.0, standardize=False)).fit(X, y)
    ones = np.column_stack([np.ones(len(y)), X])
    beta = np.linalg.lstsq(ones, y, rcond=None)[0]
    assert fit_ridge(X, y, NuisanceSpec(lam=0.0, standardize=False)) \
        == pytest.approx(beta, abs=1e-8)
    assert model.predict(X) == pytest.approx(ones @ beta, abs=1e-8)


def test_ridge_constant_column_gets_zero_weight():
    rng = np.random.default_rng(5)
    X = np.column_stack([rng.normal(size=30), np.full(30, 7.0)])
    y = rng.normal(size=30)
    model = RidgeModel(NuisanceSpec()).fit(X, y)
    assert model.coef_[1] == 0.0


def test_singular_system_with_lambda_zero():
    rng = np.random.default_rng(6)
    x = rng.normal(size=40)
    X = np.column_stack([x, 2 * x])
    with pytest.raises(SingularSystem):
        RidgeModel(NuisanceSpec(lam=0.0, standardize=False)).fit(X, rng.normal(size=40))


# ------------------------------------------------------------------ ATE core

def test_fwl_exactness_in_debug_mode():
    """Full-sample OLS nuisances: DML tau equals the joint OLS coefficient."""
    X, y, t = make_linear_data(seed=7)
    est = run_dml(X, y, t, spec=NuisanceSpec(lam=0.0, standardize=False),
                  debug_full_sample=True)
    full = np.column_stack([np.ones(len(y)), t, X])
    beta = np.linalg.lstsq(full, y, rcond=None)[0]
    assert abs(est.tau - beta[1]) < 1e-8


def test_hc1_se_matches_sandwich_oracle():
    rng = np.random.default_rng(8)
    yt = rng.normal(size=200)
    tt = rng.normal(size=200)
    est = estimate_ate(Residuals(y_tilde=yt, t_tilde=tt))
    tau = (yt @ tt) / (tt @ tt)
    u = yt - tau * tt
    n = 200
    se = np.sqrt(n / (n - 1) * np.sum(tt**2 * u**2) / (tt @ tt) ** 2)
    assert est.tau == pytest.approx(tau, abs=1e-12)
    assert est.se == pytest.approx(se, abs=1e-12)
    assert est.ci95[0] == pytest.approx(tau - 1.96 * se, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.1, 50), b=st.floats(0.1, 50))
def test_ate_scale_equivariance(a, b):
    X, y, t = make_linear_data(n=150, seed=11)
    base = run_dml(X, y, t, K=3, seed=0)
    scaled = run_dml(X, a * y, b * t, K=3, seed=0)
    assert scaled.tau == pytest.approx(base.tau * a / b, rel=1e-9)
    assert scaled.se == pytest.approx(base.se * a / b, rel=1e-9)


def test_ate_shift_invariance():
    X, y, t = make_linear_data(n=150, seed=12)
    base = run_dml(X, y, t, K=3, seed=0)
    shifted = run_dml(X + 3.0, y - 11.0, t + 5.0, K=3, seed=0)
    assert shifted.tau == pytest.approx(base.tau, rel=1e-9)


def test_degenerate_treatment_detected():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(100, 3))
    t = X @ np.array([1.0, -2.0, 0.5])  # fully explained by the controls
    y = rng.normal(size=100)
    with pytest.raises(DegenerateTreatment):
        run_dml(X, y, t, K=5, seed=0, spec=NuisanceSpec(lam=1e-8, standardize=False))


def test_crossfit_residuals_are_out_of_fold():
    """Row residuals must not change when the row's own fold model changes."""
    X, y, t = make_linear_data(n=90, seed=14)
    plan = kfold_split(90, 3, seed=3)
    res = crossfit_residuals(X, y, t, plan, NuisanceSpec())
    # oracle: recompute fold 0 residuals by hand
    test = plan.fold_indices(0)
    train = np.flatnonzero(plan.assignment != 0)
    m = RidgeModel(NuisanceSpec()).fit(X[train], y[train])
    assert res.y_tilde[test] == pytest.approx(y[test] - m.predict(X[test]), abs=1e-12)


def test_placebo_test_is_null():
    X, y, t = make_linear_data(n=500, seed=15)
    rng = np.random.default_rng(16)
    pseudo = rng.normal(size=500)
    plan = kfold_split(500, 5, seed=0)
    est = placebo_test(X, y, pseudo, plan, NuisanceSpec())
    assert abs(est.tau) < 4 * est.se


# ------------------------------------------------------------------ splines

def test_spline_partition_of_unity():
    v = np.linspace(0, 1, 101)
    for degree in (0, 1, 2, 3):
        B = spline_basis(v, degree=degree)
        assert B.sum(axis=1) == pytest.approx(np.ones(101), abs=1e-12)
        assert (B >= -1e-12).all()


def test_make_basis_knot_validation():
    v = np.linspace(0, 1, 50)
    with pytest.raises(KnotOutOfRange):
        make_basis(v, interior_knots=[0.5, 0.3])
    with pytest.raises(KnotOutOfRange):
        make_basis(v, interior_knots=[0.0, 0.5])  # not strictly inside


def test_constant_moderator_falls_back_to_intercept_basis():
    basis = make_basis(np.full(20, 0.4))
    assert basis.degree == 0 and basis.n_columns == 1
    B = basis.design_matrix(np.full(20, 0.4))
    assert B == pytest.approx(np.ones((20, 1)))


def test_cate_with_constant_basis_reproduces_ate():
    X, y, t = make_linear_data(n=300, seed=17)
    plan = kfold_split(300, 5, seed=1)
    spec = NuisanceSpec()
    ate = estimate_ate(crossfit_residuals(X, y, t, plan, spec))
    basis = BSplineBasis(degree=0, knot_vector=np.array([0.0, 1.0]))
    v = np.linspace(0, 1, 300)
    res = crossfit_cate_residuals(X, y, t, basis.design_matrix(v), plan, spec)
    curve = estimate_cate(res, basis, v)
    assert curve.coefficients[0] == pytest.approx(ate.tau, abs=1e-10)
    # pointwise se matches the HC1 ATE se up to the dof correction n/(n-k) vs n/(n-1)
    n = 300
    assert curve.evaluation[0][2] * np.sqrt((n - 1) / n) \
        == pytest.approx(ate.se * np.sqrt((n - 1) / n), rel=1e-6)


def test_cate_recovers_linear_heterogeneity():
    """Planted tau(v) = 1 + 2v with an independent moderator."""
    rng = np.random.default_rng(18)
    n = 4000
    X = rng.normal(size=(n, 3))
    v = rng.uniform(0, 1, n)
    t = X @ np.array([0.4, -0.2, 0.1]) + rng.normal(size=n)
    y = (1.0 + 2.0 * v) * t + X @ np.array([1.0, 0.5, -1.0]) + rng.normal(size=n)
    curve = run_cate(X, y, t, v, K=5, seed=2, degree=1, n_interior=2)
    grid = np.array([pt[0] for pt in curve.evaluation])
    eff = np.array([pt[1] for pt in curve.evaluation])
    assert eff == pytest.approx(1.0 + 2.0 * grid, abs=0.15)


def test_collinear_basis_raises():
    X, y, t = make_linear_data(n=80, seed=19)
    v = np.repeat([0.0, 1.0], 40)  # only two support points: cubic basis is singular
    with pytest.raises(CollinearBasis):
        run_cate(X, y, t, v, K=4, seed=0, degree=3, n_interior=0)


def test_estimate_reports_and_significance():
    X, y, t = make_linear_data(n=300, tau=1.0, seed=20)
    est = run_dml(X, y, t, K=5, seed=0)
    d = est.to_dict()
    assert set(d) == {"estimand", "tau", "se", "p", "ci95", "n", "K"}
    assert est.significant() and d["n"] == 300 and d["K"] == 5
