"""The named estimators of target and study effects among the treated.

Posterior estimators (BCF, BCF-piS, BART, BHM) pair draw ``m`` of the
effect model with draw ``m`` of the volunteering model.  Frequentist
estimators (OLS, IPW, AIPW) take their interval from a bootstrap that refits
every model inside each resample.
"""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .bayes_linear import fit_bayes_logistic_volunteering, fit_bhm_outcome
from .config import (BART_OUTCOME, BART_PROPENSITY, BCF_DEFAULT, BhmConfig, McmcConfig)
from .core import (ESTIMANDS, ConfigError, DataError, Dataset, EmptySubgroupError,
                   EstimateResult, ModelError, PositivityError, PosteriorDraws,
                   per_draw_aggregates, summarize_draws)
from .forest import fit_bart, fit_bart_volunteering, fit_bcf, predict_tau
from .glm import (bootstrap, fit_logistic, fit_wls, intercept_design, predict_logistic,
                  treatment_design)

ESTIMATOR_NAMES = ("BCF", "BCF-piS", "BART", "OLS", "BHM", "IPW", "AIPW")
POSTERIOR = frozenset({"BCF", "BCF-piS", "BART", "BHM"})
_ALIASES = {"bcf": "BCF", "bcf-pis": "BCF-piS", "bcf_pis": "BCF-piS", "bcf-πs": "BCF-piS",
            "bart": "BART", "ols": "OLS", "bhm": "BHM", "ipw": "IPW", "ippw": "IPW",
            "aipw": "AIPW", "aippw": "AIPW"}
PROB_EPS = 1e-12


def canonical_name(name: str) -> str:
    key = str(name).strip().lower()
    if key not in _ALIASES:
        raise ConfigError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATOR_NAMES)}")
    return _ALIASES[key]


@dataclass(frozen=True)
class EstimatorSpec:
    """What to estimate and how.

    ``subgroup`` (TCATT only) maps covariate names to the admitted values,
    e.g. ``{"x3": [1], "x6": ["b", "c"]}``; numeric ranges use
    ``{"x2": {"min": 70, "max": 80}}``.
    """

    name: str
    estimand: str = "TATT"
    weighting: str = "unit"
    level: float = 0.90
    mcmc: Optional[McmcConfig] = None
    propensity_mcmc: Optional[McmcConfig] = None
    bhm: Optional[BhmConfig] = None
    bootstrap_b: int = 900
    ippw_population: str = "target"
    subgroup: Optional[dict] = None
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "name", canonical_name(self.name))
        if self.estimand not in ESTIMANDS:
            raise ConfigError(f"unknown estimand {self.estimand!r}")
        if self.weighting not in ("unit", "size"):
            raise ConfigError("weighting must be 'unit' or 'size'")
        if self.ippw_population not in ("target", "study"):
            raise ConfigError("ippw_population must be 'target' or 'study'")
        if self.estimand == "TCATT" and not self.subgroup:
            raise ConfigError("TCATT needs a subgroup predicate")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")

    @property
    def inference(self) -> str:
        return "posterior" if self.name in POSTERIOR else "bootstrap"

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("mcmc", "propensity_mcmc", "bhm"):
            if d[key] is None:
                d.pop(key)
        if d["subgroup"] is None:
            d.pop("subgroup")
        return d


# --------------------------------------------------------------------------
# helpers


def _child_seed(seed, k: int) -> int:
    base = np.random.SeedSequence(seed).entropy if seed is None else seed
    return int(np.random.SeedSequence([base, k]).generate_state(1)[0])


def _kinds(ds: Dataset) -> list:
    return [c.kind for c in ds.schema.covariates]


def subgroup_mask(dataset: Dataset, predicate) -> np.ndarray:
    """Evaluate a covariate predicate (see EstimatorSpec) on every unit."""
    if callable(predicate):
        return np.asarray(predicate(dataset), bool)
    mask = np.ones(dataset.n, bool)
    for name, cond in predicate.items():
        j = dataset.schema.index(name)
        cov = dataset.schema.covariates[j]
        col = dataset.x[:, j]
        if isinstance(cond, dict):
            lo, hi = cond.get("min", -np.inf), cond.get("max", np.inf)
            mask &= (col >= lo) & (col <= hi)
        else:
            vals = cond if isinstance(cond, (list, tuple)) else [cond]
            if cov.kind == "categorical":
                codes = [cov.levels.index(str(v)) for v in vals]
            else:
                codes = [float(v) for v in vals]
            mask &= np.isin(col, codes)
    return mask


def check_target_sample(dataset: Dataset, estimand: str) -> None:
    st = dataset.study
    if not (np.any(dataset.a[st] == 1) and np.any(dataset.a[st] == 0)):
        raise DataError("study sample needs treated and comparison units")
    if estimand != "SATT":
        if np.all(st):
            raise DataError(
                f"{estimand} needs the target sample, but every unit is in the study sample "
                "(no S=0 rows)"
            )
        v = dataset.v[dataset.study_region]
        if not (np.any(v == 1) and np.any(v == 0)):
            raise DataError("target sample needs volunteers and non-volunteers in the study region")


def _aggregation_rows(dataset: Dataset, spec: EstimatorSpec) -> np.ndarray:
    """Units whose effects are averaged: study treated (SATT) or target units."""
    if spec.estimand == "SATT":
        return dataset.study_treated
    rows = np.ones(dataset.n, bool)
    if spec.estimand == "TCATT":
        rows &= subgroup_mask(dataset, spec.subgroup)
        if not rows.any():
            raise EmptySubgroupError("subgroup selects no target units")
    return rows


def _size(dataset: Dataset, spec: EstimatorSpec, rows) -> np.ndarray:
    return dataset.n_bene[rows] if spec.weighting == "size" else np.ones(int(np.sum(rows)))


# --------------------------------------------------------------------------
# posterior estimators


def posterior_draws(spec: EstimatorSpec, dataset: Dataset, seed=None) -> PosteriorDraws:
    """Paired (tau, weight) draws over the units being averaged.

    For SATT the weights are 1 (or n_bene) over study treated units; for
    TATT/TCATT they are volunteering-probability draws over target units.
    """
    if spec.inference != "posterior":
        raise ConfigError(f"{spec.name} is not a posterior estimator")
    check_target_sample(dataset, spec.estimand)
    rows = _aggregation_rows(dataset, spec)
    xr = dataset.x[rows]
    tau = _effect_draws(spec, dataset, xr, seed)
    M = tau.shape[0]
    size = _size(dataset, spec, rows)
    if spec.estimand == "SATT":
        w = np.broadcast_to(size, tau.shape)
    else:
        w = _volunteer_draws(spec, dataset, rows, seed)
        if w.shape[0] != M:
            raise ConfigError(
                f"effect model has {M} draws but volunteering model has {w.shape[0]}; "
                "they must match"
            )
        w = w * size
    return PosteriorDraws(tau, w, dataset.ids[rows])


def _effect_draws(spec, dataset, xr, seed) -> np.ndarray:
    st = dataset.study
    kinds = _kinds(dataset)
    names = dataset.schema.names
    if spec.name == "BART":
        cfg = (spec.mcmc or BART_OUTCOME).with_(seed=_child_seed(seed, 1))
        X = np.column_stack([dataset.x[st], dataset.a[st]])
        fit = fit_bart(X, dataset.y[st], kinds=kinds + ["binary"], weights=dataset.n_bene[st],
                       config=cfg, names=names + ["A"], treatment_col=X.shape[1] - 1)
        return predict_tau(fit, xr)
    if spec.name in ("BCF", "BCF-piS"):
        pcfg = spec.propensity_mcmc or BART_PROPENSITY
        pa_fit = fit_bart(dataset.x[st], dataset.a[st].astype(float), kinds=kinds, binary=True,
                          config=pcfg.with_(seed=_child_seed(seed, 3)), names=names)
        pi_a = np.clip(pa_fit.predict(dataset.x[st]).mean(axis=0), 1e-10, 1 - 1e-10)
        include = spec.name == "BCF-piS"
        pi_s_train = pi_s_pred = None
        if include:
            ps_fit = fit_bart(dataset.x, dataset.s.astype(float), kinds=kinds, binary=True,
                              config=pcfg.with_(seed=_child_seed(seed, 4)), names=names)
            pi_s_all = ps_fit.predict(dataset.x).mean(axis=0)
            pi_s_train = pi_s_all[st]
            pi_s_pred = ps_fit.predict(xr).mean(axis=0)
        cfg = (spec.mcmc or BCF_DEFAULT).with_(seed=_child_seed(seed, 1))
        fit = fit_bcf(dataset.x[st], dataset.y[st], dataset.a[st].astype(float), pi_a,
                      kinds=kinds, weights=dataset.n_bene[st], include_pi_s=include,
                      pi_s=pi_s_train, config=cfg, names=names,
                      mu_cols=dataset.schema.role_columns("mu"),
                      tau_cols=dataset.schema.role_columns("tau"))
        return fit.predict_tau(xr, pi_s_pred)
    if spec.name == "BHM":
        cfg = replace(spec.bhm or BhmConfig(), seed=_child_seed(seed, 1))
        fit = fit_bhm_outcome(dataset, cfg)
        return fit.predict_tau(xr)
    raise ConfigError(f"no effect model for {spec.name}")


def _volunteer_draws(spec, dataset, rows, seed) -> np.ndarray:
    targets = dataset.subset(rows)
    if spec.name == "BHM":
        cfg = replace(spec.bhm or BhmConfig(), seed=_child_seed(seed, 2))
        return fit_bayes_logistic_volunteering(dataset, targets, cfg)
    cfg = (spec.propensity_mcmc or BART_PROPENSITY).with_(seed=_child_seed(seed, 2))
    return fit_bart_volunteering(dataset, targets, cfg)


# --------------------------------------------------------------------------
# frequentist building blocks


def tau_ols(dataset: Dataset, rows=None, weights=None) -> np.ndarray:
    """Per-unit effect ``A + x'(X*A block)`` from the interacted regression
    fit on the study sample (weights default to n_bene)."""
    fit = fit_wls(dataset, weights=weights)
    xd, names, _ = dataset.design("reference", rows)
    a_idx = fit.names.index("A")
    k = len(names)
    return fit.coef[a_idx] + xd @ fit.coef[a_idx + 1: a_idx + 1 + k]


def outcome_predictions(dataset: Dataset, rows=None):
    """Fitted E(Y | S=1, A=a, X) for a = 0, 1 at every selected unit."""
    fit = fit_wls(dataset)
    xd, names, _ = dataset.design("reference", rows)
    n = xd.shape[0]
    m1 = fit.predict(treatment_design(xd, np.ones(n), names)[0])
    m0 = fit.predict(treatment_design(xd, np.zeros(n), names)[0])
    return m0, m1


def volunteer_probability(dataset: Dataset, rows=None) -> np.ndarray:
    """Logistic P(V=1 | X) fit in the study region, predicted at ``rows``."""
    fit = fit_logistic(dataset, "v", dataset.study_region)
    return predict_logistic(fit, dataset, rows)


def treatment_propensity(dataset: Dataset) -> np.ndarray:
    """Logistic P(A=1 | S=1, X) at study units, checked for positivity."""
    st = dataset.study
    fit = fit_logistic(dataset, "a", st)
    p = predict_logistic(fit, dataset, st)
    bad = (p < PROB_EPS) | (p > 1 - PROB_EPS)
    if bad.any():
        ids = dataset.ids[st][bad]
        raise PositivityError(
            f"estimated treatment propensity at 0 or 1 for units {', '.join(ids[:10])}"
            + (" ..." if ids.size > 10 else "")
        )
    return p


def study_propensity(dataset: Dataset) -> np.ndarray:
    """Logistic P(S=1 | X) over the whole target sample, at study units."""
    fit = fit_logistic(dataset, "s")
    p = predict_logistic(fit, dataset, dataset.study)
    if np.any(p < PROB_EPS):
        raise PositivityError("estimated study-selection propensity is 0 for some study units")
    return p


def arm_weights(a, p_a, p_v, p_s=None, size=None) -> np.ndarray:
    """Combined participation weights normalized to sum to one per arm.

    Unit in arm ``a`` gets ``P(V=1|X) / [P(A=a | S=1, X) P(S=1 | X)]``
    (times its size when given); ``p_s=None`` drops the selection factor.
    """
    a = np.asarray(a)
    raw = np.asarray(p_v, float) / np.where(a == 1, p_a, 1 - np.asarray(p_a, float))
    if p_s is not None:
        raw = raw / np.asarray(p_s, float)
    if size is not None:
        raw = raw * size
    w = np.empty_like(raw)
    for arm in (0, 1):
        sel = a == arm
        if not sel.any():
            raise DataError(f"no study units in arm {arm}")
        w[sel] = raw[sel] / raw[sel].sum()
    return w


def _nuisance(dataset: Dataset, population: str, p_a=None, p_s=None, p_v=None):
    st = dataset.study
    p_a = treatment_propensity(dataset) if p_a is None else np.asarray(p_a, float)
    p_v = volunteer_probability(dataset, st) if p_v is None else np.asarray(p_v, float)
    if population == "target":
        p_s = study_propensity(dataset) if p_s is None else np.asarray(p_s, float)
    else:
        p_s = None
    return p_a, p_v, p_s


def tau_ippw(dataset: Dataset, population: str = "target", p_a=None, p_s=None, p_v=None,
             size=None, keep=None) -> np.ndarray:
    """Per-study-unit pseudo-values ``Y w(1) - Y w(0)``; their sum is the
    weighting estimate.

    Probabilities (at study units) are estimated by logistic regression when
    not given; ``keep`` restricts to a subset of study units before
    normalizing.
    """
    st = dataset.study
    a = dataset.a[st]
    y = dataset.y[st]
    p_a, p_v, p_s = _nuisance(dataset, population, p_a, p_s, p_v)
    keep = np.ones(a.size, bool) if keep is None else np.asarray(keep, bool)
    out = np.zeros(a.size)
    w = arm_weights(a[keep], p_a[keep], p_v[keep], None if p_s is None else p_s[keep],
                    None if size is None else np.asarray(size)[keep])
    out[keep] = np.where(a[keep] == 1, y[keep] * w, -y[keep] * w)
    return out


def tau_aippw(dataset: Dataset, population: str = "target", m0=None, m1=None,
              p_v_all=None, p_a=None, p_s=None, size=None, rows=None):
    """Augmented weighting estimate, returned as (regression part,
    per-study-unit corrections); the estimate is ``reg + corrections.sum()``.

    The regression part averages ``m1 - m0`` over target units with
    volunteering weights; corrections are per-arm normalized weighted
    residuals at study units.  ``m0``/``m1`` (outcome predictions at every
    unit) default to the interacted linear regression; ``rows`` restricts
    both parts to a subgroup.
    """
    st = dataset.study
    if m0 is None or m1 is None:
        m0, m1 = outcome_predictions(dataset)
    m0 = np.asarray(m0, float)
    m1 = np.asarray(m1, float)
    pv = volunteer_probability(dataset) if p_v_all is None else np.asarray(p_v_all, float)
    rows = np.ones(dataset.n, bool) if rows is None else np.asarray(rows, bool)
    size = np.ones(dataset.n) if size is None else np.asarray(size, float)
    wr = (pv * size)[rows]
    reg = float(np.sum(wr * (m1 - m0)[rows]) / np.sum(wr))
    p_a, _, p_s = _nuisance(dataset, population, p_a, p_s, pv[st])
    keep = rows[st]
    a = dataset.a[st][keep]
    w = arm_weights(a, p_a[keep], pv[st][keep], None if p_s is None else p_s[keep],
                    size[st][keep])
    y = dataset.y[st][keep]
    resid = np.where(a == 1, y - m1[st][keep], y - m0[st][keep])
    correction = np.zeros(int(st.sum()))
    correction[keep] = np.where(a == 1, w * resid, -w * resid)
    return reg, correction


def _frequentist_point(spec: EstimatorSpec, dataset: Dataset) -> float:
    check_target_sample(dataset, spec.estimand)
    st = dataset.study
    size = dataset.n_bene if spec.weighting == "size" else np.ones(dataset.n)
    if spec.estimand == "SATT":
        tr = dataset.study_treated
        if spec.name == "OLS":
            tau = tau_ols(dataset, tr)
            return float(np.sum(size[tr] * tau) / np.sum(size[tr]))
        p = treatment_propensity(dataset)
        a = dataset.a[st].astype(float)
        y = dataset.y[st]
        sz = size[st]
        odds = p / (1 - p)
        if spec.name == "IPW":
            wc = (1 - a) * odds * sz
            wt = a * sz
            return float(np.sum(wt * y) / wt.sum() - np.sum(wc * y) / wc.sum())
        m0, _ = outcome_predictions(dataset, st)
        terms = sz * (a * y - (1 - a) * y * odds - m0 * (a - p) / (1 - p))
        return float(np.sum(terms) / np.sum(sz * a))
    rows = _aggregation_rows(dataset, spec)
    p_v_all = volunteer_probability(dataset)
    if spec.name == "OLS":
        tau = tau_ols(dataset, rows)
        w = p_v_all[rows] * size[rows]
        return float(np.sum(w * tau) / np.sum(w))
    if spec.name == "IPW":
        return float(np.sum(tau_ippw(dataset, spec.ippw_population, p_v=p_v_all[st],
                                     size=size[st], keep=rows[st])))
    reg, corr = tau_aippw(dataset, spec.ippw_population, p_v_all=p_v_all, size=size,
                          rows=rows)
    return reg + float(np.sum(corr))


# --------------------------------------------------------------------------
# entry point


def estimate(spec: EstimatorSpec, dataset: Dataset, seed=None) -> EstimateResult:
    """Run one estimator for one estimand.

    Posterior estimators summarize per-draw aggregates (mean, central
    interval, share of draws below zero).  Bootstrap estimators report the
    full-sample estimate with a percentile interval.
    """
    if spec.inference == "posterior":
        draws = posterior_draws(spec, dataset, seed)
        agg = per_draw_aggregates(draws.tau, draws.w)
        return summarize_draws(agg, spec.estimand, spec.level, estimator=spec.name)
    point = _frequentist_point(spec, dataset)
    boot = bootstrap(lambda d: _frequentist_point(spec, d), dataset, B=spec.bootstrap_b,
                     seed=_child_seed(seed, 5), jobs=spec.jobs)
    return summarize_draws(boot.values, spec.estimand, spec.level, point=point,
                           posterior=False, estimator=spec.name, n_failed=len(boot.failed))


def estimate_satt(spec: EstimatorSpec, dataset: Dataset, seed=None) -> EstimateResult:
    return estimate(replace(spec, estimand="SATT", subgroup=None), dataset, seed)


# --------------------------------------------------------------------------
# identification check by exact enumeration


@dataclass(frozen=True)
class DiscreteDgp:
    """Fully enumerable population over three binary covariates.

    Cell ``k`` (0..7) has covariates given by the bits of ``k`` (x1 is the
    most significant).  ``hidden_effect`` adds an unmeasured binary
    modifier U with P(U=1 | V=v) = ``hidden_prob[v]`` and effect shift
    ``hidden_effect`` for U=1, which breaks exchangeability when the two
    probabilities differ.
    """

    p_x: tuple  # 8 cell probabilities
    w: tuple  # P(V=1 | x)
    mu0: tuple  # E(Y^0 | x)
    tau: tuple  # E(Y^1 - Y^0 | x) for U=0
    p_study: tuple = (0.5,) * 8  # P(S=1 | x)
    p_treat: tuple = (0.5,) * 8  # P(A=1 | S=1, x)
    hidden_prob: tuple = (0.0, 0.0)
    hidden_effect: float = 0.0

    def __post_init__(self):
        for name in ("p_x", "w", "mu0", "tau", "p_study", "p_treat"):
            if len(getattr(self, name)) != 8:
                raise ConfigError(f"{name} needs 8 cell values")
        if abs(sum(self.p_x) - 1) > 1e-12 or min(self.p_x) < 0:
            raise ConfigError("p_x must be a probability vector")

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteDgp":
        d = dict(d)
        for key in list(d):
            if isinstance(d[key], list):
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "DiscreteDgp":
        p_x = rng.dirichlet(np.ones(8))
        return cls(tuple(p_x), tuple(rng.uniform(0.05, 0.95, 8)),
                   tuple(rng.normal(0, 50, 8)), tuple(rng.normal(-10, 20, 8)),
                   tuple(rng.uniform(0.1, 0.9, 8)), tuple(rng.uniform(0.1, 0.9, 8)))


@dataclass(frozen=True)
class IdentificationResult:
    direct: float
    functional: float
    gap: float


def check_identification(dgp: DiscreteDgp) -> IdentificationResult:
    """Compare E(Y^1 - Y^0 | V=1) computed from potential outcomes with the
    weighted functional ``E[w(X) tau(X)] / E[w(X)]`` built from observable
    study contrasts.  Raises PositivityError when a cell with positive
    volunteering mass has no study units in one arm."""
    px = np.asarray(dgp.p_x)
    w = np.asarray(dgp.w)
    ps = np.asarray(dgp.p_study)
    pt = np.asarray(dgp.p_treat)
    relevant = (px > 0) & (w > 0)
    bad = relevant & ((ps <= 0) | (pt <= 0) | (pt >= 1))
    if bad.any():
        cells = [format(k, "03b") for k in np.flatnonzero(bad)]
        raise PositivityError(f"no study units in some arm for covariate cells {cells}")
    pu = np.asarray(dgp.hidden_prob, float)
    # direct: enumerate (x, v, u) with potential outcomes
    num = den = 0.0
    for k, v, u in itertools.product(range(8), (0, 1), (0, 1)):
        p_v = w[k] if v == 1 else 1 - w[k]
        p_u = pu[v] if u == 1 else 1 - pu[v]
        mass = px[k] * p_v * p_u
        y0 = dgp.mu0[k] + 5.0 * u
        y1 = y0 + dgp.tau[k] + dgp.hidden_effect * u
        if v == 1:
            num += mass * (y1 - y0)
            den += mass
    direct = num / den
    # functional: study contrasts per cell (study selection ignores V and U)
    tau_obs = np.empty(8)
    for k in range(8):
        pu_x = w[k] * pu[1] + (1 - w[k]) * pu[0]
        ey = {}
        for a in (0, 1):
            tot = 0.0
            for u in (0, 1):
                p_u = pu_x if u == 1 else 1 - pu_x
                y0 = dgp.mu0[k] + 5.0 * u
                tot += p_u * (y0 + a * (dgp.tau[k] + dgp.hidden_effect * u))
            ey[a] = tot
        tau_obs[k] = ey[1] - ey[0]
    functional = float(np.sum(px * w * tau_obs) / np.sum(px * w))
    return IdentificationResult(float(direct), functional, abs(float(direct) - functional))
