from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

import scaleup.estimators as E
from scaleup.config import BhmConfig
from scaleup.core import ConfigError, DataError, PositivityError, per_draw_aggregates
from scaleup.estimators import (DiscreteDgp, EstimatorSpec, arm_weights, check_identification,
                                estimate, posterior_draws, subgroup_mask, tau_aippw, tau_ippw,
                                tau_ols)
from scaleup.glm import logistic_irls

from conftest import FAST_BHM, FAST_FOREST, make_dataset


def four_unit():
    # two study treated, two study controls, two non-study target units
    y = [10.0, 14.0, 4.0, 6.0, 0.0, 0.0]
    a = [1, 1, 0, 0, 0, 0]
    s = [1, 1, 1, 1, 0, 0]
    r = [1, 1, 0, 0, 1, 0]
    v = [1, 1, 0, 0, 0, -1]
    return make_dataset(np.arange(6.0), y, a, s, r, v)


P_A = np.array([0.5, 0.8, 0.25, 0.5])
P_V = np.array([0.2, 0.4, 0.3, 0.6, 0.1, 0.4])
M1 = np.array([9.0, 12.0, 7.0, 8.0, 2.0, 6.0])
M0 = np.array([3.0, 5.0, 5.0, 4.0, 1.0, 6.0])


def test_ippw_hand_example():
    # treated weights 4/9, 5/9; control weights 1/4, 3/4
    est = tau_ippw(four_unit(), "study", p_a=P_A, p_v=P_V[:4]).sum()
    assert est == pytest.approx(110 / 9 - 5.5, abs=1e-12)


def test_ippw_with_half_propensities_is_difference_of_means():
    ds = four_unit()
    est = tau_ippw(ds, "study", p_a=np.full(4, 0.5), p_v=np.full(4, 0.3)).sum()
    assert est == pytest.approx(12.0 - 5.0, abs=1e-12)


def test_aippw_hand_example_with_misspecified_models():
    reg, corr = tau_aippw(four_unit(), "study", m0=M0, m1=M1, p_v_all=P_V, p_a=P_A)
    assert reg == pytest.approx(3.55, abs=1e-12)
    assert reg + corr.sum() == pytest.approx(347 / 90, abs=1e-12)


def test_aippw_collapses_to_ippw_and_to_regression():
    ds = four_unit()
    zero = np.zeros(6)
    reg, corr = tau_aippw(ds, "study", m0=zero, m1=zero, p_v_all=P_V, p_a=P_A)
    ippw = tau_ippw(ds, "study", p_a=P_A, p_v=P_V[:4]).sum()
    assert reg == 0 and reg + corr.sum() == pytest.approx(ippw, abs=1e-12)
    m0 = np.array([0, 0, 4.0, 6.0, 1, 1])
    m1 = np.array([10.0, 14.0, 0, 0, 1, 1])
    reg, corr = tau_aippw(ds, "study", m0=m0, m1=m1, p_v_all=P_V, p_a=P_A)
    assert_allclose(corr, 0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0.01, 0.99), st.floats(0.01, 1),
                          st.floats(0.05, 1), st.floats(1, 100)), min_size=2, max_size=30))
def test_arm_weights_normalize(units):
    a = np.array([u[0] for u in units])
    if a.min() == a.max():
        a[0] = 1 - a[0]
    cols = [np.array([u[k] for u in units]) for k in range(1, 5)]
    w = arm_weights(a, *cols)
    for arm in (0, 1):
        assert abs(w[a == arm].sum() - 1) <= 1e-12
    assert np.all(w > 0)


def saturated_six():
    # binary z: treatment share 1/3 at z=0 and 2/3 at z=1 (saturated models)
    z = [0, 0, 0, 1, 1, 1]
    y = [10.0, 4.0, 6.0, 12.0, 8.0, 3.0]
    a = [1, 0, 0, 1, 1, 0]
    return make_dataset(z, y, a, [1] * 6, a, a, kinds=["binary"])


def test_satt_estimators_on_saturated_hand_data():
    ds = saturated_six()
    # p = 1/3, 2/3; m0 = 5, 3; treated y - m0 = 5, 9, 5; control terms cancel
    for name in ("OLS", "IPW", "AIPW"):
        point = E._frequentist_point(EstimatorSpec(name, "SATT"), ds)
        assert point == pytest.approx(19 / 3, abs=1e-7), name  # logistic solver tolerance


def test_aiptw_term_by_term_with_continuous_covariate():
    z = np.array([0.1, 0.9, 0.4, 1.3, 0.7, 0.2, 1.1, 0.5])
    a = np.array([1, 1, 0, 1, 0, 0, 1, 0])
    y = np.array([5.0, 9.0, 2.0, 11.0, 4.0, 1.0, 8.0, 3.5])
    nb = np.array([10, 20, 15, 30, 25, 10, 12, 18.0])
    ds = make_dataset(z, y, a, np.ones(8, int), a, a, n_bene=nb)
    X = np.column_stack([np.ones(8), z])
    p = logistic_irls(X, a.astype(float), tol=1e-13).predict(X)
    # independent WLS for the interacted outcome model, then m0 = control surface
    D = np.column_stack([np.ones(8), z, a, z * a])
    coef = np.linalg.solve((D.T * nb) @ D, (D.T * nb) @ y)
    m0 = coef[0] + coef[1] * z
    terms = a * y - (1 - a) * y * p / (1 - p) - m0 * (a - p) / (1 - p)
    expected = terms.sum() / a.sum()
    got = E._frequentist_point(EstimatorSpec("AIPW", "SATT"), ds)
    assert got == pytest.approx(expected, abs=1e-8)


def test_iptw_balanced_design_is_difference_of_means():
    z = [0, 0, 1, 1, 0, 0, 1, 1]
    a = [1, 0, 1, 0, 1, 0, 1, 0]
    y = np.array([3.0, 1.0, 7.0, 2.0, 5.0, 0.0, 6.0, 4.0])
    ds = make_dataset(z, y, a, [1] * 8, a, a, kinds=["binary"])
    got = E._frequentist_point(EstimatorSpec("IPW", "SATT"), ds)
    assert got == pytest.approx(y[::2].mean() - y[1::2].mean(), abs=1e-7)


def test_tau_ols_matches_normal_equations():
    z = np.array([0.0, 1.0, 2.0, 0.5, 1.5, 2.5])
    a = np.array([1, 1, 1, 0, 0, 0])
    y = np.array([3.0, 4.5, 7.0, 1.0, 1.2, 2.9])
    ds = make_dataset(z, y, a, np.ones(6, int), a, a)
    D = np.column_stack([np.ones(6), z, a, z * a])
    coef = np.linalg.solve(D.T @ D, D.T @ y)
    assert_allclose(tau_ols(ds, weights=np.ones(6)), coef[2] + coef[3] * z, atol=1e-10)


def test_tatt_requires_target_sample():
    ds = saturated_six()
    with pytest.raises(DataError, match="target sample"):
        estimate(EstimatorSpec("OLS", "TATT"), ds, seed=1)


def test_spec_validation():
    with pytest.raises(ConfigError):
        EstimatorSpec("nope")
    with pytest.raises(ConfigError):
        EstimatorSpec("BART", "TCATT")
    assert EstimatorSpec("ippw").name == "IPW"


def test_subgroup_mask(small_replication):
    ds = small_replication.dataset
    m = subgroup_mask(ds, {"X3": [1], "X2": {"min": 70}})
    assert np.all(ds.x[m, 1] == 1) and np.all(ds.x[m, 0] >= 70)
    m6 = subgroup_mask(ds, {"X6": ["1", "2"]})
    assert set(np.unique(ds.x[m6, 4])) <= {1.0, 2.0}


def test_pairing_contract_with_sentinel_draws(small_replication, monkeypatch):
    ds = small_replication.dataset
    M = 12

    def effect(spec, dataset, xr, seed):
        n = xr.shape[0]
        return np.arange(M)[:, None] * 1000.0 + np.arange(n)[None, :]

    def volunteer(spec, dataset, rows, seed):
        n = int(np.sum(rows))
        w = np.zeros((M, n))
        w[np.arange(M), np.arange(M) % n] = 1.0
        return w

    monkeypatch.setattr(E, "_effect_draws", effect)
    monkeypatch.setattr(E, "_volunteer_draws", volunteer)
    d = posterior_draws(EstimatorSpec("BART", "TATT"), ds)
    agg = per_draw_aggregates(d.tau, d.w)
    assert_allclose(agg, np.arange(M) * 1000.0 + np.arange(M) % ds.n, rtol=0, atol=0)


def test_mismatched_draw_counts_raise(small_replication, monkeypatch):
    ds = small_replication.dataset
    monkeypatch.setattr(E, "_effect_draws", lambda s, d, xr, seed: np.zeros((5, xr.shape[0])))
    monkeypatch.setattr(E, "_volunteer_draws",
                        lambda s, d, rows, seed: np.ones((6, int(np.sum(rows)))))
    with pytest.raises(ConfigError, match="must match"):
        posterior_draws(EstimatorSpec("BART", "TATT"), ds)


def test_tatt_reduces_to_satt_with_indicator_weights(small_replication, monkeypatch):
    ds = small_replication.dataset
    coef = np.linspace(-1, 1, ds.x.shape[1])

    def effect(spec, dataset, xr, seed):
        return np.arange(4)[:, None] + (xr @ coef)[None, :]

    monkeypatch.setattr(E, "_effect_draws", effect)
    monkeypatch.setattr(E, "_volunteer_draws", lambda s, d, rows, seed: np.broadcast_to(
        d.study_treated[rows].astype(float), (4, int(np.sum(rows)))))
    t = posterior_draws(EstimatorSpec("BART", "TATT"), ds)
    s = posterior_draws(EstimatorSpec("BART", "SATT"), ds)
    assert_allclose(per_draw_aggregates(t.tau, t.w), per_draw_aggregates(s.tau, s.w),
                    rtol=1e-13)


def test_estimators_do_not_mutate_dataset(small_replication):
    ds = small_replication.dataset
    before = ds.checksum()
    fast = dict(mcmc=FAST_FOREST.with_(kept=20, burn_in=20),
                propensity_mcmc=FAST_FOREST.with_(kept=20, burn_in=20),
                bhm=BhmConfig(chains=1, burn_in=20, kept=20), bootstrap_b=5)
    for name in E.ESTIMATOR_NAMES:
        res = estimate(EstimatorSpec(name, "TATT", **fast), ds, seed=3)
        assert np.isfinite(res.point) and res.lo <= res.hi
        if name in E.POSTERIOR:
            assert res.prob_savings is not None
        else:
            assert res.prob_savings is None
    assert ds.checksum() == before


def test_posterior_estimate_is_deterministic(small_replication):
    spec = EstimatorSpec("BHM", "TATT", bhm=FAST_BHM)
    one = estimate(spec, small_replication.dataset, seed=9)
    two = estimate(spec, small_replication.dataset, seed=9)
    assert one.to_dict() == two.to_dict()


def test_tcatt_on_subgroup(small_replication):
    spec = EstimatorSpec("OLS", "TCATT", subgroup={"X3": [1]}, bootstrap_b=5)
    res = estimate(spec, small_replication.dataset, seed=1)
    assert res.estimand == "TCATT" and np.isfinite(res.point)


def test_null_study_gives_zero_effect():
    rng = np.random.default_rng(4)
    n = 400
    z = rng.integers(0, 2, n)
    r = (np.arange(n) < 200).astype(int)
    v = np.where(r == 1, rng.integers(0, 2, n), 0)
    a = (r == 1) & (v == 1)
    s = a | ((r == 0) & (rng.random(n) < 0.6))
    y = np.where(s, 5.0 + 0 * z, rng.normal(size=n))
    ds = make_dataset(z, y, a.astype(int), s.astype(int), r, v, kinds=["binary"])
    for name in ("OLS", "IPW", "AIPW"):
        res = estimate(EstimatorSpec(name, "TATT", bootstrap_b=20), ds, seed=1)
        assert res.point == pytest.approx(0, abs=1e-9)


# identification by enumeration


def test_identification_random_designs():
    rng = np.random.default_rng(0)
    for _ in range(20):
        res = check_identification(DiscreteDgp.random(rng))
        assert res.gap <= 1e-10


def test_identification_constant_w_gives_ate():
    rng = np.random.default_rng(1)
    d = DiscreteDgp.random(rng)
    d = replace(d, w=(0.3,) * 8)
    res = check_identification(d)
    ate = float(np.dot(d.p_x, d.tau))
    assert res.direct == pytest.approx(ate, abs=1e-12)
    assert res.functional == pytest.approx(ate, abs=1e-12)


def test_identification_negative_control_and_positivity():
    d = DiscreteDgp.random(np.random.default_rng(2))
    broken = replace(d, hidden_prob=(0.1, 0.8), hidden_effect=-20.0)
    assert check_identification(broken).gap > 1.0
    bad = replace(d, p_treat=(1.0,) + d.p_treat[1:])
    with pytest.raises(PositivityError):
        check_identification(bad)


def test_ols_tatt_matches_identification_functional():
    # additive cell effects, so the interacted regression is correctly specified
    bits = np.array([[(k >> 2) & 1, (k >> 1) & 1, k & 1] for k in range(8)], float)
    tau = tuple(-5 + bits @ [4.0, -6.0, 2.0])
    mu0 = tuple(50 + bits @ [10.0, 3.0, -7.0])
    dgp = DiscreteDgp(p_x=(0.125,) * 8, w=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8),
                      mu0=mu0, tau=tau, p_study=(0.5,) * 8, p_treat=(0.5,) * 8)
    target = check_identification(dgp).functional
    rng = np.random.default_rng(5)
    n = 6000
    cell = rng.integers(0, 8, n)
    x = bits[cell]
    r = (rng.random(n) < 0.5).astype(int)
    v = (rng.random(n) < np.asarray(dgp.w)[cell]).astype(int)
    a = ((r == 1) & (v == 1) & (rng.random(n) < 0.5)).astype(int)
    s = (a == 1) | ((r == 0) & (rng.random(n) < 0.3))
    y = np.asarray(mu0)[cell] + a * np.asarray(tau)[cell] + rng.normal(0, 2, n)
    ds = make_dataset(x, y, a, s.astype(int), r, v, kinds=["binary"] * 3)
    res = estimate(EstimatorSpec("OLS", "TATT", bootstrap_b=200), ds, seed=2)
    assert abs(res.point - target) < 3 * res.se
