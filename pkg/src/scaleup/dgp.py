"""Synthetic practices, volunteering, matched controls and outcomes.

Practices live in a study region (``r=1``) or a non-study region
(``r=0``).  Volunteers in the study region form the study treated group;
four controls per treated practice are matched from the non-study region.
Outcomes are simulated per beneficiary for two periods and reduced to the
practice-level change score.  Ground truth comes from the same draws.

Measured covariates, in schema order:

=====  ===========  ============================================
X2     continuous   practice mean beneficiary age
X3     binary
X4     binary       drives volunteering together with X5
X5     binary
X6     categorical  3 levels, coded 0/1/2
X7     categorical  3 levels, coded 0/1/2
X8     continuous   share in [0, 1]
X9     continuous   practice size (number of beneficiaries)
=====  ===========  ============================================
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy.special import expit

from .core import ConfigError, Covariate, CovariateSchema, Dataset, ModelError, NonFiniteError
from .matching import MatchResult, match_controls, propensity_scores

COVARIATES = ("X2", "X3", "X4", "X5", "X6", "X7", "X8", "X9")

BETA = (-0.42 * math.sqrt(0.5), 1.72, -0.45, 0.34, -0.49, -0.17, 1.80, 1.39)
DELTA_RAW = (1.81, 0.10, 0.33, 0.93, -2.21, 2.78, -0.66, -0.04, -0.53, 0.88, 1.66,
             -0.01, 0.24, -0.26, 1.24, 0.71, 1.08, -0.78, 0.03, 1.73, -0.67, 0.34,
             1.15, -0.06, -0.74, 0.29)
# 28 lexicographic pairs of [X3..X9, t]; the two trailing pairs get 0
DELTA = tuple(math.sqrt(0.05) * d for d in DELTA_RAW) + (0.0, 0.0)
EFFECT_TERMS = ("X3", "X4", "X5", "X6", "X7", "X8", "X9", "t")
EFFECT_PAIRS = tuple(itertools.combinations(range(8), 2))

# discrete cells: (X3, X4, X5, X6, X7), X7 varying fastest
CELLS = np.array(list(itertools.product((0, 1), (0, 1), (0, 1), (0, 1, 2), (0, 1, 2))), float)


def _cell_probs(p3, p4, p5_given4, p6, p7):
    probs = []
    for x3, x4, x5, x6, x7 in CELLS.astype(int):
        pr5 = p5_given4[x4]
        probs.append((p3 if x3 else 1 - p3) * (p4 if x4 else 1 - p4)
                     * (pr5 if x5 else 1 - pr5) * p6[x6] * p7[x7])
    probs = np.array(probs)
    return tuple((probs / probs.sum()).tolist())


# region shift on X3, X6 and X8 (X8 through its mean below)
DEFAULT_CELLS_STUDY = _cell_probs(0.80, 0.20, (0.35, 0.22), (0.55, 0.30, 0.15), (0.3, 0.4, 0.3))
DEFAULT_CELLS_NONSTUDY = _cell_probs(0.08, 0.20, (0.35, 0.22), (0.15, 0.30, 0.55), (0.3, 0.4, 0.3))


def default_schema() -> CovariateSchema:
    return CovariateSchema((
        Covariate("X2", "continuous"),
        Covariate("X3", "binary"),
        Covariate("X4", "binary"),
        Covariate("X5", "binary"),
        Covariate("X6", "categorical", ("0", "1", "2")),
        Covariate("X7", "categorical", ("0", "1", "2")),
        Covariate("X8", "continuous"),
        Covariate("X9", "continuous"),
    ))


@dataclass(frozen=True)
class DgpConfig:
    n_study_region: int = 11000
    n_nonstudy_region: int = 37000
    scale: float = 1.0
    cells_study: tuple = DEFAULT_CELLS_STUDY
    cells_nonstudy: tuple = DEFAULT_CELLS_NONSTUDY
    x8_mean_study: float = 0.55
    x8_mean_nonstudy: float = 0.30
    x8_sd: float = 0.15
    size_meanlog: float = 4.0
    size_sdlog: float = 0.5
    size_min: int = 20
    age_mean: float = 72.0
    age_sd_between: float = 3.0
    age_sd_within: float = 8.0
    age_min: float = 21.0
    age_max: float = 100.0
    # sickness: Gamma(shape_base + shape_slope * band, sick_scale) at t=0,
    # multiplied by 1 + growth_base + growth_quad * band^2 at t=1
    shape_base: float = 1.0
    shape_slope: float = 0.4
    sick_scale: float = 0.25
    growth_base: float = 0.01
    growth_quad: float = 0.0025
    # volunteering
    gamma_intercept: float = -5.23
    gamma_b: float = 1.25
    gamma_interaction: float = 1.25
    gamma_age: float = 0.04
    b_rate: float = 0.25
    # treatment effect
    tau_intercept: float = -69.0
    nu_scale: float = 50 * math.sqrt(0.2)
    lambda_mult: float = math.sqrt(0.8)
    lambda_scale: float = math.sqrt(0.3)
    lambda_scale_all: bool = True
    age_terms_coef: float = 1.0
    beta: tuple = BETA
    delta: tuple = DELTA
    # outcome surface
    trend: float = -45.0
    c0_mean: float = 0.0
    c0_sd: float = 50.0
    c1_mean: float = 400.0
    c1_sd: float = 50.0
    c2_mean: float = 40.0
    c2_sd: float = 10.0
    err_meanlog: float = 0.0
    err_sdlog: float = 2.2
    err_mult: float = 25.0
    err_cap: float = 100000.0
    # False: one error per beneficiary shared by both periods (cancels in the
    # change score); True: an independent error in each period
    error_per_period: bool = False
    # "beneficiary" (per-beneficiary simulation) or "linear_null" (tau = 0, linear
    # practice-level surface, Gaussian noise with variance ~ 1/n_bene)
    outcome_model: str = "beneficiary"
    linear_intercept: float = -50.0
    linear_coef: tuple = (1.0, -8.0, 3.0, 5.0, 2.0, -4.0, 1.0, 2.0, -20.0, 0.1)
    linear_noise_sd: float = 30.0
    k_controls: int = 4
    caliper: Optional[float] = None
    weighting: str = "unit"

    def __post_init__(self):
        for name in ("cells_study", "cells_nonstudy"):
            probs = np.asarray(getattr(self, name), float)
            if probs.shape != (len(CELLS),):
                raise ConfigError(f"{name} needs {len(CELLS)} cell probabilities")
            if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-9:
                raise ConfigError(f"{name} must be nonnegative and sum to 1")
            object.__setattr__(self, name, tuple(probs.tolist()))
        if min(self.n_study_region, self.n_nonstudy_region) <= 0 or self.scale <= 0:
            raise ConfigError("region sizes and scale must be positive")
        if self.size_min < 1:
            raise ConfigError("size_min must be >= 1")
        if len(self.beta) != 8 or len(self.delta) != 28:
            raise ConfigError("beta needs 8 and delta 28 coefficients")
        if self.outcome_model not in ("beneficiary", "linear_null"):
            raise ConfigError(f"unknown outcome_model {self.outcome_model!r}")
        if self.weighting not in ("unit", "size"):
            raise ConfigError("weighting must be 'unit' or 'size'")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "delta", tuple(float(d) for d in self.delta))
        object.__setattr__(self, "linear_coef", tuple(float(c) for c in self.linear_coef))

    @property
    def sizes(self) -> tuple:
        return (max(1, int(round(self.n_study_region * self.scale))),
                max(1, int(round(self.n_nonstudy_region * self.scale))))

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @classmethod
    def from_dict(cls, spec: dict) -> "DgpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(spec) - known
        if unknown:
            raise ConfigError(f"unknown dgp keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in spec.items()}
        return cls(**kw)


@dataclass(frozen=True)
class TruthRecord:
    true_satt: float
    true_tatt: float
    n_treated: int
    n_controls: int
    n_volunteers: int
    n_target: int
    offset: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Replication:
    dataset: Dataset
    truth: TruthRecord
    y0: np.ndarray
    y1: np.ndarray
    tau: np.ndarray  # practice-mean effect per unit
    match: Optional[MatchResult] = None


@dataclass(frozen=True, eq=False)
class Units:
    """Practice covariates before study assignment."""

    x: np.ndarray  # (n, 8) in COVARIATES order
    r: np.ndarray
    sizes: np.ndarray
    ages: np.ndarray  # beneficiary baseline ages, grouped by practice
    owner: np.ndarray  # practice index of each beneficiary
    sick0: np.ndarray  # beneficiary sickness at t=0
    sick1: np.ndarray


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent stream for replication ``rep`` of a run seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(rep)]))


def generate_covariates(config: DgpConfig, rng: np.random.Generator) -> Units:
    n_study, n_non = config.sizes
    r = np.concatenate([np.ones(n_study, np.int8), np.zeros(n_non, np.int8)])
    n = r.size
    cells = np.concatenate([
        rng.choice(len(CELLS), n_study, p=np.asarray(config.cells_study)),
        rng.choice(len(CELLS), n_non, p=np.asarray(config.cells_nonstudy)),
    ])
    disc = CELLS[cells]
    x8_mean = np.where(r == 1, config.x8_mean_study, config.x8_mean_nonstudy)
    x8 = np.clip(x8_mean + config.x8_sd * rng.standard_normal(n), 0.0, 1.0)
    sizes = np.maximum(config.size_min, np.round(
        np.exp(config.size_meanlog + config.size_sdlog * rng.standard_normal(n)))).astype(np.int64)
    centre = config.age_mean + config.age_sd_between * rng.standard_normal(n)
    owner = np.repeat(np.arange(n), sizes)
    ages = np.clip(centre[owner] + config.age_sd_within * rng.standard_normal(owner.size),
                   config.age_min, config.age_max)
    band = np.clip(np.floor((ages - 45.0) / 5.0), 0, 9)
    sick0 = rng.gamma(config.shape_base + config.shape_slope * band, config.sick_scale)
    sick1 = sick0 * (1.0 + config.growth_base + config.growth_quad * band**2)
    x2 = np.bincount(owner, weights=ages, minlength=n) / sizes
    x = np.column_stack([x2, disc, x8, sizes.astype(float)])
    return Units(x, r, sizes, ages, owner, sick0, sick1)


def volunteer_logit(x: np.ndarray, b: np.ndarray, config: DgpConfig) -> np.ndarray:
    both = (x[:, 2] == 1) & (x[:, 3] == 1)
    inter = np.where(both, config.gamma_interaction, -config.gamma_interaction)
    return (config.gamma_intercept + config.gamma_b * b + (1 - b) * inter
            + config.gamma_age * x[:, 0])


def assign_volunteering(units: Units, config: DgpConfig, rng: np.random.Generator,
                        return_prob: bool = False):
    """Volunteering for every target unit; B_j is a latent coin per practice."""
    n = units.x.shape[0]
    b = (rng.random(n) < config.b_rate).astype(float)
    prob = expit(volunteer_logit(units.x, b, config))
    v = (rng.random(n) < prob).astype(np.int8)
    return (v, prob) if return_prob else v


def effect_terms(x: np.ndarray) -> np.ndarray:
    """Practice-level vector [X3..X9, t=1] entering the effect function."""
    return np.column_stack([x[:, 1:8], np.ones(x.shape[0])])


def effect_index(x: np.ndarray, config: DgpConfig) -> np.ndarray:
    """Linear plus pairwise-interaction part of lambda (before scaling)."""
    z = effect_terms(x)
    lin = z @ np.asarray(config.beta)
    pairs = np.column_stack([z[:, i] * z[:, j] for i, j in EFFECT_PAIRS])
    return lin + pairs @ np.asarray(config.delta)


def age_terms(ages: np.ndarray, x3: np.ndarray) -> np.ndarray:
    excess = np.maximum(ages - 70.0, 0.0)
    with np.errstate(divide="ignore"):
        spline = -np.maximum(0.0, np.log(excess))
    return spline + x3 * ((ages < 65).astype(float) + (ages < 72).astype(float))


def beneficiary_effects(units: Units, config: DgpConfig, rng: np.random.Generator) -> np.ndarray:
    x, owner = units.x, units.owner
    aged = config.age_terms_coef * age_terms(units.ages, x[owner, 1])
    index = effect_index(x, config)[owner]
    if config.lambda_scale_all:
        lam = config.lambda_scale * (aged + index)
    else:
        lam = config.lambda_scale * aged + index
    nu = rng.standard_normal(owner.size)
    return config.tau_intercept + config.nu_scale * nu + config.lambda_mult * lam


def mu_surface(x: np.ndarray) -> np.ndarray:
    x2, x3, x5, x6, x8, x9 = x[:, 0], x[:, 1], x[:, 3], x[:, 4], x[:, 6], x[:, 7]
    return -128 * x3 * x9 + 48 * np.log(x2 + 0.1) + 96 * x5 * x6 - 64 * x8


def generate_outcomes(units: Units, a: np.ndarray, config: DgpConfig,
                      rng: np.random.Generator, ids=None):
    """Observed change score plus both potential change scores.

    Returns ``(y, y0, y1, tau_bar, offset)`` where ``tau_bar`` is the
    practice mean of the beneficiary effects (``y1 - y0`` without rounding).
    """
    n = units.x.shape[0]
    if config.outcome_model == "linear_null":
        xd, _, _ = default_schema().design(units.x, "reference")
        surface = config.linear_intercept + xd @ np.asarray(config.linear_coef)
        noise = config.linear_noise_sd * np.sqrt(units.sizes.mean() / units.sizes)
        y0 = surface + noise * rng.standard_normal(n)
        tau_bar = np.zeros(n)
        y1 = y0.copy()
        y = np.where(a == 1, y1, y0)
        _check_finite(y, ids)
        return y, y0, y1, tau_bar, 0.0

    owner, sizes = units.owner, units.sizes
    c0 = config.c0_mean + config.c0_sd * rng.standard_normal(n)
    c1 = config.c1_mean + config.c1_sd * rng.standard_normal(n)
    c2 = config.c2_mean + config.c2_sd * rng.standard_normal(n)
    base = mu_surface(units.x) + c0
    u0 = np.bincount(owner, weights=units.sick0, minlength=n) / sizes
    u1 = np.bincount(owner, weights=units.sick1, minlength=n) / sizes
    level0 = base + c1 * u0 + c2 * u0**2
    level1 = base + config.trend + c1 * u1 + c2 * u1**2
    tau_i = beneficiary_effects(units, config, rng)
    err = [np.minimum(config.err_mult * rng.lognormal(config.err_meanlog, config.err_sdlog,
                                                      owner.size), config.err_cap)
           for _ in range(2 if config.error_per_period else 1)]
    if not config.error_per_period:
        err.append(err[0])
    ben0 = level0[owner] + err[0]
    ben1 = level1[owner] + err[1]
    low = min(ben0.min(), ben1.min(), (ben1 + tau_i).min())
    offset = -low + 1.0 if low < 0 else 0.0
    mean0 = np.bincount(owner, weights=ben0 + offset, minlength=n) / sizes
    mean1 = np.bincount(owner, weights=ben1 + offset, minlength=n) / sizes
    tau_bar = np.bincount(owner, weights=tau_i, minlength=n) / sizes
    y0 = mean1 - mean0
    y1 = y0 + tau_bar
    y = np.where(a == 1, y1, y0)
    _check_finite(y, ids)
    return y, y0, y1, tau_bar, offset


def _check_finite(y, ids):
    bad = np.flatnonzero(~np.isfinite(y))
    if bad.size:
        uid = bad[0] if ids is None else ids[bad[0]]
        raise NonFiniteError(f"non-finite outcome for unit {uid}")


def unit_ids(n: int) -> np.ndarray:
    width = max(5, len(str(n)))
    return np.array([f"u{i:0{width}d}" for i in range(n)])


def _weighted_mean(vals, sizes, mode):
    if mode == "size":
        return float(np.sum(sizes * vals) / np.sum(sizes))
    return float(np.mean(vals))


def make_replication(config: DgpConfig, rng: np.random.Generator) -> Replication:
    units = generate_covariates(config, rng)
    v = assign_volunteering(units, config, rng)
    n = v.size
    ids = unit_ids(n)
    treated = (units.r == 1) & (v == 1)
    pool = units.r == 0
    if not treated.any():
        raise ModelError("no study-region volunteers; cannot form a treated group")
    schema = default_schema()
    rows = treated | pool
    xd, names, _ = schema.design(units.x[rows], "reference")
    scores = propensity_scores(xd, names, treated[rows])
    row_ids = ids[rows]
    is_t = treated[rows]
    match = match_controls(scores[is_t], scores[~is_t], k=config.k_controls,
                           treated_ids=row_ids[is_t], control_ids=row_ids[~is_t],
                           caliper=config.caliper)
    s = treated.astype(np.int8)
    a = treated.astype(np.int8)
    pos = {u: i for i, u in enumerate(ids)}
    for t_id in match.unmatched:
        s[pos[t_id]] = 0
        a[pos[t_id]] = 0
    ctrl = np.array([pos[c] for c in match.controls], dtype=np.int64)
    s[ctrl] = 1
    y, y0, y1, tau_bar, offset = generate_outcomes(units, a, config, rng, ids)
    # unmatched study-region volunteers stay outside the study sample; they
    # must not look like study treated, so a=0 and s=0 for them
    ds = Dataset(ids, y, a, s, units.r, v, units.sizes.astype(float), units.x, schema)
    st = (s == 1) & (a == 1)
    truth = TruthRecord(
        true_satt=_weighted_mean(tau_bar[st], units.sizes[st], config.weighting),
        true_tatt=_weighted_mean(tau_bar[v == 1], units.sizes[v == 1], config.weighting),
        n_treated=int(st.sum()),
        n_controls=int(ctrl.size),
        n_volunteers=int(v.sum()),
        n_target=int(n),
        offset=float(offset),
    )
    return Replication(ds, truth, y0, y1, tau_bar, match)


def with_overrides(config: DgpConfig, **kw) -> DgpConfig:
    return replace(config, **kw)
