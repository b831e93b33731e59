import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from scaleup.glm import (RankDeficiencyError, SeparationError, bootstrap, fit_wls,
                         logistic_irls, resample_indices, strata_labels, wls)

from conftest import make_dataset


def newton_oracle(X, y, iters=60):
    """Plain Newton-Raphson on the logistic log-likelihood."""
    b = np.zeros(X.shape[1])
    for _ in range(iters):
        p = 1 / (1 + np.exp(-X @ b))
        b = b + np.linalg.solve(X.T @ (X * (p * (1 - p))[:, None]), X.T @ (y - p))
    return b


X8 = np.column_stack([np.ones(8), [0.5, -1.2, 2.0, 0.3, -0.7, 1.5, -2.1, 0.9],
                      [1, 0, 1, 1, 0, 0, 1, 0]])
Y8 = np.array([1, 0, 1, 0, 1, 0, 1, 1], float)


def test_logistic_matches_newton_oracle():
    fit = logistic_irls(X8, Y8, tol=1e-12)
    assert fit.converged
    assert_allclose(fit.coef, newton_oracle(X8, Y8), rtol=0, atol=1e-8)
    p = fit.predict(X8)
    assert np.max(np.abs(X8.T @ (Y8 - p))) <= 1e-6


def test_logistic_intercept_only_is_logit_of_mean():
    y = np.array([1, 1, 0, 0, 0, 1, 0, 0, 0, 0], float)
    fit = logistic_irls(np.ones((10, 1)), y)
    assert fit.coef[0] == pytest.approx(np.log(0.3 / 0.7), abs=1e-10)


def test_logistic_label_flip_negates_coefficients():
    X = np.column_stack([np.ones(8), [-2, -1, -0.5, 0.5, 1, 2, 0.2, -0.2]])
    y = np.array([0, 0, 1, 1, 1, 0, 1, 0], float)
    a, b = logistic_irls(X, y, tol=1e-12), logistic_irls(X, 1 - y, tol=1e-12)
    assert_allclose(a.coef, -b.coef, atol=1e-9)


def test_logistic_separation_raises():
    X = np.column_stack([np.ones(6), [-3, -2, -1, 1, 2, 3]])
    with pytest.raises(SeparationError):
        logistic_irls(X, np.array([0, 0, 0, 1, 1, 1], float))


def test_wls_matches_normal_equations():
    X = np.column_stack([np.ones(5), [1.0, 2.0, 4.0, 3.0, 7.0], [0, 1, 1, 0, 1]])
    y = np.array([2.0, 3.5, 6.1, 4.2, 9.9])
    w = np.array([1.0, 2.0, 0.5, 3.0, 1.5])
    oracle = np.linalg.solve(X.T @ (w[:, None] * X), X.T @ (w * y))
    fit = wls(X, y, w)
    assert_allclose(fit.coef, oracle, rtol=0, atol=1e-10)
    assert np.max(np.abs(X.T @ (w * (y - X @ fit.coef)))) <= 1e-8


def test_wls_recovers_noiseless_linear_model_and_ignores_equal_weights():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(40), rng.normal(size=(40, 3)) * [1, 100, 0.01]])
    beta = np.array([1.5, -2.0, 0.03, 400.0])
    y = X @ beta
    assert_allclose(wls(X, y).coef, beta, rtol=1e-10, atol=1e-10)
    y2 = y + rng.normal(size=40)
    assert_allclose(wls(X, y2, np.full(40, 3.0)).coef, wls(X, y2).coef, rtol=1e-12)


def test_wls_collinear_names_columns():
    X = np.column_stack([np.ones(6), np.arange(6.0), 2 * np.arange(6.0)])
    with pytest.raises(RankDeficiencyError, match="x1"):
        wls(X, np.arange(6.0), names=["c", "x1", "x2"])


def test_fit_wls_uses_treatment_interactions():
    z = np.array([0.0, 1, 2, 3, 0, 1, 2, 3, 1.5, 2.5])
    a = np.array([1, 1, 1, 1, 0, 0, 0, 0, 1, 0])
    y = 1 + 2 * z + a * (3 - z)
    ds = make_dataset(z, y, a, np.ones(10, int), a, a)
    fit = fit_wls(ds)
    assert fit.get("A") == pytest.approx(3, abs=1e-10)
    assert fit.get("z0:A") == pytest.approx(-1, abs=1e-10)


def _boot_dataset(vals):
    n = len(vals)
    return make_dataset(np.zeros(n), vals, np.zeros(n, int), np.zeros(n, int),
                        np.zeros(n, int), np.zeros(n, int))


def test_bootstrap_se_of_mean():
    vals = np.array([3.0, 7.0, 1.0, 9.0, 4.0, 6.0, 2.0, 8.0])
    ds = _boot_dataset(vals)
    draws = bootstrap(lambda d: d.y.mean(), ds, B=900, seed=5)
    analytic = vals.std() / np.sqrt(vals.size)
    assert abs(draws.values.std() / analytic - 1) < 0.15


def test_bootstrap_degenerate_and_deterministic():
    ds = _boot_dataset(np.full(6, 2.5))
    d = bootstrap(lambda d: d.y.mean(), ds, B=50, seed=1)
    assert np.all(d.values == 2.5)
    ds2 = _boot_dataset(np.arange(6.0))
    one = bootstrap(lambda d: d.y.mean(), ds2, B=40, seed=9).values
    two = bootstrap(lambda d: d.y.mean(), ds2, B=40, seed=9, jobs=2).values
    assert_array_equal(one, two)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=40), st.integers(0, 2**32 - 1))
def test_stratified_resample_preserves_strata(labels, seed):
    strata = np.array(labels)
    idx = resample_indices(strata, np.random.default_rng(seed))
    assert_array_equal(strata[idx], strata)


def test_strata_labels_separate_cells(small_replication):
    ds = small_replication.dataset
    lab = strata_labels(ds)
    for u in np.unique(lab):
        m = lab == u
        for col in (ds.s, ds.a, ds.r, ds.v):
            assert np.unique(col[m]).size == 1
