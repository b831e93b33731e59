import numpy as np
import pytest
from numpy.testing import assert_array_equal
from scipy.special import expit

from scaleup.config import ConfigError
from scaleup.dgp import (CELLS, DgpConfig, assign_volunteering, generate_covariates,
                         make_replication, replication_rng, volunteer_logit)

NO_HETEROGENEITY = dict(beta=(0.0,) * 8, delta=(0.0,) * 28, nu_scale=0.0, age_terms_coef=0.0)


def test_replication_structure(small_replication):
    rep = small_replication
    ds = rep.dataset
    assert_array_equal(ds.y, np.where(ds.a == 1, rep.y1, rep.y0))
    treated = ds.study_treated
    assert np.all((ds.r[treated] == 1) & (ds.v[treated] == 1))
    assert np.all(ds.r[ds.study_control] == 0)
    assert rep.truth.n_controls == 4 * rep.truth.n_treated
    assert len(set(rep.match.controls)) == rep.truth.n_controls


def test_replication_is_pure_function_of_seed():
    cfg = DgpConfig(scale=0.05)
    one = make_replication(cfg, replication_rng(3, 1))
    two = make_replication(cfg, replication_rng(3, 1))
    assert one.truth == two.truth
    assert one.dataset.checksum() == two.dataset.checksum()
    other = make_replication(cfg, replication_rng(3, 2))
    assert other.dataset.checksum() != one.dataset.checksum()


def test_constant_effect_when_heterogeneity_is_off():
    cfg = DgpConfig(scale=0.02, c1_mean=0, c1_sd=0, c2_mean=0, c2_sd=0, err_mult=0.0,
                    **NO_HETEROGENEITY)
    rep = make_replication(cfg, replication_rng(5, 0))
    assert np.all(rep.tau == -69.0)
    assert rep.truth.true_satt == -69.0 and rep.truth.true_tatt == -69.0


def test_truth_stability_without_heterogeneity():
    rep = make_replication(DgpConfig(scale=0.02, **NO_HETEROGENEITY), replication_rng(8, 0))
    assert abs(rep.truth.true_satt - rep.truth.true_tatt) == 0.0


def test_null_effect_gives_zero_truth():
    rep = make_replication(DgpConfig(scale=0.02, outcome_model="linear_null"),
                           replication_rng(1, 0))
    assert rep.truth.true_satt == 0.0 and rep.truth.true_tatt == 0.0
    cfg = DgpConfig(scale=0.02, tau_intercept=0.0, lambda_mult=0.0, nu_scale=0.0)
    rep = make_replication(cfg, replication_rng(1, 0))
    assert rep.truth.true_satt == 0.0 and rep.truth.true_tatt == 0.0


def test_region_covariate_shift_matches_cell_tables():
    cfg = DgpConfig(scale=0.5)
    units = generate_covariates(cfg, np.random.default_rng(0))
    for region, probs in ((1, cfg.cells_study), (0, cfg.cells_nonstudy)):
        x = units.x[units.r == region]
        expected = np.asarray(probs) @ CELLS[:, 0]  # P(X3 = 1)
        se = np.sqrt(expected * (1 - expected) / x.shape[0])
        assert abs(x[:, 1].mean() - expected) < 3 * se


def test_single_cell_table_gives_identical_discrete_covariates():
    point = np.zeros(len(CELLS))
    point[7] = 1.0
    cfg = DgpConfig(scale=0.01, cells_study=tuple(point), cells_nonstudy=tuple(point))
    units = generate_covariates(cfg, np.random.default_rng(1))
    assert np.all(units.x[:, 1:6] == CELLS[7])
    again = generate_covariates(cfg, np.random.default_rng(1))
    assert_array_equal(units.x, again.x)


def test_volunteer_rate_matches_linear_predictor():
    cfg = DgpConfig()
    units = generate_covariates(cfg, np.random.default_rng(2))
    v, prob = assign_volunteering(units, cfg, np.random.default_rng(3), return_prob=True)
    # expected rate averages over the latent coin as well
    p_mix = (cfg.b_rate * expit(volunteer_logit(units.x, np.ones(v.size), cfg))
             + (1 - cfg.b_rate) * expit(volunteer_logit(units.x, np.zeros(v.size), cfg)))
    se = np.sqrt(np.sum(p_mix * (1 - p_mix))) / v.size
    assert abs(v.mean() - p_mix.mean()) < 3 * se
    none = assign_volunteering(units, DgpConfig(gamma_intercept=-1e6), np.random.default_rng(3))
    assert none.sum() == 0


def test_config_validation():
    with pytest.raises(ConfigError):
        DgpConfig(cells_study=(1.0,))
    with pytest.raises(ConfigError):
        DgpConfig.from_dict({"nope": 1})
    cfg = DgpConfig(scale=0.3)
    assert DgpConfig.from_dict(cfg.to_dict()) == cfg
