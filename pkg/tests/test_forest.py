import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from scaleup.config import McmcConfig
from scaleup.core import DataError, ModelError
from scaleup.forest import Binner, fit_bart, fit_bart_volunteering, fit_bcf, predict_tau
from scaleup.glm import wls

from conftest import FAST_FOREST


def step_data(seed, n=500):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, 2))
    y = 10 * (X[:, 0] > 0) + rng.normal(0, 0.1, n)
    return X, y


def test_binner_rules():
    X = np.column_stack([np.linspace(0, 1, 500), np.tile([0, 1, 2, 3], 125)])
    b = Binner.fit(X, ["continuous", "categorical"], grid=100)
    Xb = b.transform(X)
    assert Xb[:, 0].max() <= 100 and np.all(np.diff(Xb[:, 0]) >= 0)
    assert_array_equal(Xb[:, 1], X[:, 1])
    with pytest.raises(DataError):
        b.transform(np.array([[0.5, 7.0]]))


def test_constant_target():
    X = np.random.default_rng(0).normal(size=(200, 3))
    fit = fit_bart(X, np.full(200, 3.7), config=FAST_FOREST)
    assert np.max(np.abs(fit.predict(X) - 3.7)) < 0.01


def test_step_function_beats_linear_fit():
    X, y = step_data(1)
    fit = fit_bart(X, y, config=FAST_FOREST)
    design = np.column_stack([np.ones(len(y)), X])
    lin = wls(design, y)
    truth = 10 * (X[:, 0] > 0)
    bart_rmse = np.sqrt(np.mean((fit.predict(X).mean(axis=0) - truth) ** 2))
    lin_rmse = np.sqrt(np.mean((lin.predict(design) - truth) ** 2))
    assert bart_rmse < lin_rmse


def test_shift_equivariance_under_fixed_seed():
    X, y = step_data(2, n=200)
    a = fit_bart(X, y, config=FAST_FOREST).predict(X)
    b = fit_bart(X, y + 123.0, config=FAST_FOREST).predict(X)
    assert_allclose(b - a, 123.0, rtol=0, atol=1e-9)


def test_sum_of_trees_identity_and_debug_checks():
    X, y = step_data(3, n=150)
    fit = fit_bart(X, y, config=FAST_FOREST.with_(debug=True, kept=20))
    Xb = fit.binner.transform(X)
    full = fit.forest.predict(Xb, fit.binner.is_cat)
    for d in (0, 7, 19):
        per_tree = fit.forest.predict_trees(Xb, fit.binner.is_cat, d)
        assert_allclose(per_tree.sum(axis=0), full[d], rtol=0, atol=1e-12)


def test_doubling_weights_gives_identical_chain():
    X, y = step_data(4, n=150)
    w = np.random.default_rng(0).uniform(1, 3, 150)
    a = fit_bart(X, y, weights=w, config=FAST_FOREST)
    b = fit_bart(X, y, weights=2 * w, config=FAST_FOREST)
    assert_array_equal(a.predict(X), b.predict(X))
    assert_allclose(b.sigma / a.sigma, np.sqrt(2), rtol=1e-12)


def test_draw_count_contract():
    cfg = McmcConfig(n_trees_mu=5, chains=3, burn_in=5, kept=7, thin=2, seed=3)
    X, y = step_data(5, n=60)
    fit = fit_bart(X, y, config=cfg)
    assert fit.M == 21 and fit.predict(X).shape == (21, 60)
    assert_array_equal(np.bincount(fit.chain), [7, 7, 7])
    assert McmcConfig().draws == 900


def test_identical_unit_predicts_identically():
    X, y = step_data(6, n=100)
    fit = fit_bart(X, y, config=FAST_FOREST)
    pred = fit.predict(np.vstack([X[:3], X[:3]]))
    assert_array_equal(pred[:, :3], pred[:, 3:])


def test_chains_do_not_depend_on_jobs():
    X, y = step_data(7, n=80)
    cfg = FAST_FOREST.with_(chains=2, kept=10)
    one = fit_bart(X, y, config=cfg).predict(X)
    two = fit_bart(X, y, config=cfg.with_(jobs=2)).predict(X)
    assert_array_equal(one, two)


def test_bart_tau_for_additive_truth_is_flat():
    def spread(n, seed):
        rng = np.random.default_rng(seed)
        X = rng.uniform(-1, 1, (n, 2))
        a = rng.integers(0, 2, n).astype(float)
        y = 3 * X[:, 0] + 2 * a + rng.normal(0, 0.5, n)
        Xa = np.column_stack([X, a])
        fit = fit_bart(Xa, y, kinds=["continuous", "continuous", "binary"],
                       treatment_col=2, config=FAST_FOREST)
        return predict_tau(fit, X).mean(axis=0).std()

    assert spread(2000, 1) < spread(200, 1)


def bcf_data(seed, n=400, tau=5.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    p = 1 / (1 + np.exp(-0.5 * X[:, 0]))
    a = (rng.random(n) < p).astype(float)
    y = 1 + 2 * X[:, 0] - X[:, 1] + tau * a + rng.normal(0, 1, n)
    return X, y, a, p


def test_bcf_contrast_and_shapes():
    X, y, a, p = bcf_data(0)
    fit = fit_bcf(X, y, a, p, config=FAST_FOREST)
    tau = fit.predict_tau(X)
    assert tau.shape == (fit.M, len(y))
    diff = fit.predict_outcome(X, np.ones(len(y)), p) - fit.predict_outcome(X, np.zeros(len(y)), p)
    assert_allclose(diff, tau, rtol=0, atol=1e-10)


def test_bcf_null_effect():
    X, y, a, p = bcf_data(1, tau=0.0)
    fit = fit_bcf(X, y, a, p, config=FAST_FOREST.with_(burn_in=200))
    avg = fit.predict_tau(X).mean(axis=1)
    assert abs(avg.mean()) < 2 * avg.std()


def test_bcf_pi_s_adds_one_tau_covariate():
    X, y, a, p = bcf_data(2, n=200)
    base = fit_bcf(X, y, a, p, config=FAST_FOREST.with_(kept=10))
    ps = np.random.default_rng(0).uniform(0.1, 0.9, len(y))
    more = fit_bcf(X, y, a, p, include_pi_s=True, pi_s=ps, config=FAST_FOREST.with_(kept=10))
    assert more.n_tau_covariates == base.n_tau_covariates + 1
    with pytest.raises(ModelError):
        more.predict_tau(X)


def test_bcf_rejects_bad_propensity():
    X, y, a, p = bcf_data(3, n=50)
    p = p.copy()
    p[0] = 1.0
    with pytest.raises(ModelError):
        fit_bcf(X, y, a, p, config=FAST_FOREST)


def test_probit_volunteering(small_replication):
    ds = small_replication.dataset
    w = fit_bart_volunteering(ds, config=FAST_FOREST)
    assert w.shape == (100, ds.n)
    assert np.all((w > 0) & (w < 1))


def test_probit_null_and_strong_signal():
    rng = np.random.default_rng(3)
    n = 2000
    X = rng.uniform(0, 1, (n, 3))
    v = (rng.random(n) < 0.2).astype(float)
    p = fit_bart(X, v, binary=True, config=FAST_FOREST).predict(X)
    post_mean = p.mean(axis=0)
    assert abs(post_mean.mean() - v.mean()) < 3 * np.sqrt(0.2 * 0.8 / n)
    assert np.all(np.abs(post_mean - v.mean()) < 3 * p.std(axis=0))

    v = (X[:, 1] > 0.6).astype(float)
    train = np.arange(n) < n // 2
    fit = fit_bart(X[train], v[train], binary=True, config=FAST_FOREST)
    score = fit.predict(X[~train]).mean(axis=0)
    pos, neg = score[v[~train] == 1], score[v[~train] == 0]
    auc = np.mean(pos[:, None] > neg[None, :]) + 0.5 * np.mean(pos[:, None] == neg[None, :])
    assert auc > 0.95


def test_summary_is_json_ready():
    import json

    X, y = step_data(8, n=80)
    s = fit_bart(X, y, config=FAST_FOREST.with_(kept=10)).summary()
    text = json.dumps(s)
    assert "sigma" in text
