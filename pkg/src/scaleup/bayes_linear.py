"""Hierarchical shrinkage outcome regression and Bayesian logistic
volunteering model, both sampled by Gibbs.

Categorical and binary covariates enter through one indicator per level
whose coefficients are constrained to sum to zero.  The constraint is
imposed by writing each block's coefficients as ``Q g`` where the columns of
``Q`` are an orthonormal basis orthogonal to the ones vector, so ``g`` has
an unconstrained exchangeable normal prior.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np
from scipy import linalg, stats

from .config import BhmConfig
from .core import CovariateSchema, Dataset, ModelError
from .diagnostics import max_rhat, summarize


class ConvergenceWarning(UserWarning):
    pass


def sum_to_zero_basis(k: int) -> np.ndarray:
    """(k, k-1) orthonormal columns, each orthogonal to ones(k)."""
    m = np.eye(k) - 1.0 / k
    u, _, _ = np.linalg.svd(m)
    return u[:, : k - 1]


@dataclass(frozen=True, eq=False)
class ConstrainedDesign:
    """Expanded covariates ``X*`` and their map to free parameters.

    ``matrix(x)`` gives the full-indicator design with continuous columns
    centered and scaled to ``cont_sd``; ``basis`` maps free parameters to
    ``X*`` coefficients.
    """

    schema: CovariateSchema
    names: list
    blocks: list
    cont_cols: np.ndarray
    center: np.ndarray
    spread: np.ndarray
    cont_sd: float
    basis: np.ndarray

    @classmethod
    def build(cls, schema: CovariateSchema, x: np.ndarray, cont_sd: float = 1.0):
        full, names, blocks = schema.design(x, "full")
        cont = [s for (s, e), c in zip(blocks, schema.covariates) if c.kind == "continuous"]
        cont_cols = np.array(cont, int)
        center = full[:, cont_cols].mean(axis=0)
        spread = full[:, cont_cols].std(axis=0)
        if np.any(spread == 0):
            bad = [names[j] for j, s in zip(cont_cols, spread) if s == 0]
            raise ModelError(f"constant continuous covariates: {bad}")
        k = full.shape[1]
        cols = []
        for (s, e), cov in zip(blocks, schema.covariates):
            if cov.kind == "continuous":
                b = np.zeros((k, 1))
                b[s, 0] = 1.0
            else:
                b = np.zeros((k, e - s - 1))
                b[s:e] = sum_to_zero_basis(e - s)
            cols.append(b)
        basis = np.hstack(cols)
        return cls(schema, names, blocks, cont_cols, center, spread, cont_sd, basis)

    def matrix(self, x: np.ndarray) -> np.ndarray:
        full, _, _ = self.schema.design(x, "full")
        full[:, self.cont_cols] = (full[:, self.cont_cols] - self.center) / self.spread \
            * self.cont_sd
        return full

    def free(self, x: np.ndarray) -> np.ndarray:
        return self.matrix(x) @ self.basis

    @property
    def n_free(self) -> int:
        return self.basis.shape[1]

    @property
    def width(self) -> int:
        return self.basis.shape[0]


def _gig(p: float, a: float, b: float, rng: np.random.Generator) -> float:
    """Draw from GIG with density proportional to s^(p-1) exp(-(a s + b/s)/2)."""
    if np.sqrt(a * b) < 1e-8:
        # limits as a*b -> 0: inverse gamma (p < 0) or gamma (p > 0)
        if p < 0:
            return float(max(b, 1e-300) / 2.0 / rng.gamma(-p))
        return float(rng.gamma(p) * 2.0 / a)
    return float(np.sqrt(b / a) * stats.geninvgauss.rvs(p, np.sqrt(a * b), random_state=rng))


def _mvn_prec(prec: np.ndarray, lin: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw N(prec^-1 lin, prec^-1)."""
    c = linalg.cholesky(prec, lower=True)
    mean = linalg.cho_solve((c, True), lin)
    z = rng.standard_normal(lin.size)
    return mean + linalg.solve_triangular(c.T, z, lower=False)


# --------------------------------------------------------------------------
# hierarchical outcome model


@dataclass(frozen=True, eq=False)
class BhmFit:
    """Posterior draws on the standardized outcome scale.

    ``mu`` and ``tau`` hold ``X*`` coefficients (one per indicator level);
    ``predict_tau`` returns effects on the original outcome scale.
    """

    mu0: np.ndarray
    tau0: np.ndarray
    mu: np.ndarray
    tau: np.ndarray
    sigma_mu: np.ndarray
    sigma_tau: np.ndarray
    nu: np.ndarray
    chain: np.ndarray
    design: ConstrainedDesign
    y_center: float
    y_scale: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.mu0.size

    def predict_tau(self, x: np.ndarray) -> np.ndarray:
        xs = self.design.matrix(np.asarray(x, float))
        return self.y_scale * (self.tau0[:, None] + self.tau @ xs.T)

    def predict_mu(self, x: np.ndarray) -> np.ndarray:
        xs = self.design.matrix(np.asarray(x, float))
        return self.y_center + self.y_scale * (self.mu0[:, None] + self.mu @ xs.T)

    def block_sums(self) -> np.ndarray:
        """Per-draw coefficient sums of every non-continuous block (should be 0)."""
        out = []
        for (s, e), cov in zip(self.design.blocks, self.design.schema.covariates):
            if cov.kind != "continuous":
                out.append(self.mu[:, s:e].sum(axis=1))
                out.append(self.tau[:, s:e].sum(axis=1))
        return np.array(out).T if out else np.zeros((self.M, 0))


def fit_bhm(x: np.ndarray, y: np.ndarray, a: np.ndarray, schema: CovariateSchema,
            weights: Optional[np.ndarray] = None, config: Optional[BhmConfig] = None,
            fixed_scales: Optional[tuple] = None) -> BhmFit:
    """Gibbs sampler for the shrinkage outcome regression.

    Model on standardized outcome ``y*``::

        y*_i = mu0 + X*_i mu + a_i (tau0 + X*_i tau) + e_i,
        e_i ~ N(0, nu^2 / w_i)

    with mu0, tau0 ~ N(0, 1); mu, tau ~ N(0, sigma^2) under sum-to-zero
    constraints; sigma_mu, sigma_tau, nu ~ half-Normal(0, 1).  Weights are
    rescaled to mean 1.  ``fixed_scales=(sigma_mu, sigma_tau, nu)`` holds
    the scales fixed (conjugate Gaussian case).
    """
    config = config or BhmConfig()
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    a = np.asarray(a, float)
    n = y.size
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ModelError("weights must be positive and finite")
    w = w / w.mean()
    y_center = float(np.mean(y))
    sd = float(np.std(y))
    y_scale = sd if sd > 0 else 1.0
    ys = (y - y_center) / y_scale
    design = ConstrainedDesign.build(schema, x)
    z = design.free(x)
    k = design.n_free
    D = np.column_stack([np.ones(n), z, a, z * a[:, None]])
    p = D.shape[1]
    i_mu = np.arange(1, 1 + k)
    i_tau = np.arange(2 + k, 2 + 2 * k)
    G = (D.T * w) @ D
    g = (D.T * w) @ ys

    draws = {name: [] for name in ("theta", "sigma_mu", "sigma_tau", "nu")}
    chain_ids = []
    root = np.random.SeedSequence(config.seed)
    for c in range(config.chains):
        rng = np.random.default_rng(np.random.SeedSequence([root.entropy, c]))
        if fixed_scales is not None:
            s_mu, s_tau, nu = map(float, fixed_scales)
        else:
            s_mu, s_tau, nu = 1.0, 1.0, 1.0
        for it in range(config.burn_in + config.kept * config.thin):
            prior = np.ones(p)
            prior[i_mu] = 1.0 / s_mu**2
            prior[i_tau] = 1.0 / s_tau**2
            theta = _mvn_prec(G / nu**2 + np.diag(prior), g / nu**2, rng)
            if fixed_scales is None:
                s_mu = math.sqrt(_gig((1 - k) / 2, 1.0, float(theta[i_mu] @ theta[i_mu]), rng))
                s_tau = math.sqrt(_gig((1 - k) / 2, 1.0, float(theta[i_tau] @ theta[i_tau]), rng))
                resid = ys - D @ theta
                nu = math.sqrt(_gig((1 - n) / 2, 1.0, float(np.sum(w * resid**2)), rng))
            if it >= config.burn_in and (it - config.burn_in + 1) % config.thin == 0:
                draws["theta"].append(theta)
                draws["sigma_mu"].append(s_mu)
                draws["sigma_tau"].append(s_tau)
                draws["nu"].append(nu)
                chain_ids.append(c)
    theta = np.array(draws["theta"])
    B = design.basis
    mu = theta[:, i_mu] @ B.T
    tau = theta[:, i_tau] @ B.T
    chain = np.array(chain_ids)
    params = {"mu0": theta[:, 0], "tau0": theta[:, 1 + k], "mu": mu, "tau": tau}
    if fixed_scales is None:
        params.update(sigma_mu=draws["sigma_mu"], sigma_tau=draws["sigma_tau"], nu=draws["nu"])
    diag = summarize(params, chain) if config.chains > 1 else {}
    _warn_rhat(diag, "outcome model")
    return BhmFit(theta[:, 0], theta[:, 1 + k], mu, tau, np.array(draws["sigma_mu"]),
                  np.array(draws["sigma_tau"]), np.array(draws["nu"]), chain, design,
                  y_center, y_scale, diag)


def _warn_rhat(diag: dict, label: str):
    worst = max_rhat(diag) if diag else float("nan")
    if np.isfinite(worst) and worst > 1.1:
        warnings.warn(f"{label}: max R-hat {worst:.3f} exceeds 1.1", ConvergenceWarning)


def fit_bhm_outcome(dataset: Dataset, config: Optional[BhmConfig] = None,
                    weighted: bool = True) -> BhmFit:
    """Shrinkage outcome model on the study sample with n_bene weights."""
    rows = dataset.study
    if not (np.any(dataset.a[rows] == 1) and np.any(dataset.a[rows] == 0)):
        raise ModelError("study sample needs both treatment arms")
    w = dataset.n_bene[rows] if weighted else None
    return fit_bhm(dataset.x[rows], dataset.y[rows], dataset.a[rows], dataset.schema, w, config)


# --------------------------------------------------------------------------
# Polya-Gamma draws


_TRUNC = 0.64


@nb.njit(cache=True)
def _log_phi(x):
    if x > -30.0:
        return math.log(0.5 * math.erfc(-x / math.sqrt(2.0)))
    return -0.5 * x * x - math.log(-x) - 0.5 * math.log(2.0 * math.pi)


@nb.njit(cache=True)
def _pg_a(n, x):
    k = (n + 0.5) * math.pi
    if x > _TRUNC:
        return k * math.exp(-0.5 * k * k * x)
    if x > 0.0:
        e = -1.5 * (math.log(0.5 * math.pi) + math.log(x)) + math.log(k) \
            - 2.0 * (n + 0.5) * (n + 0.5) / x
        return math.exp(e)
    return 0.0


@nb.njit(cache=True)
def _mass_texpon(z):
    t = _TRUNC
    fz = 0.125 * math.pi * math.pi + 0.5 * z * z
    b = math.sqrt(1.0 / t) * (t * z - 1.0)
    a = -math.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = math.log(fz) + fz * t
    xb = x0 - z + _log_phi(b)
    xa = x0 + z + _log_phi(a)
    qdivp = 4.0 / math.pi * (math.exp(xb) + math.exp(xa))
    return 1.0 / (1.0 + qdivp)


@nb.njit(cache=True)
def _rtigauss(z):
    # inverse Gaussian(1/z, 1) truncated to (0, TRUNC)
    t = _TRUNC
    x = t + 1.0
    if 1.0 / t > z:
        alpha = 0.0
        while np.random.random() > alpha:
            e1 = np.random.exponential(1.0)
            e2 = np.random.exponential(1.0)
            while e1 * e1 > 2.0 * e2 / t:
                e1 = np.random.exponential(1.0)
                e2 = np.random.exponential(1.0)
            x = 1.0 + e1 * t
            x = t / (x * x)
            alpha = math.exp(-0.5 * z * z * x)
    else:
        mu = 1.0 / z
        while x > t:
            y = np.random.standard_normal()
            y *= y
            half_mu = 0.5 * mu
            mu_y = mu * y
            x = mu + half_mu * mu_y - half_mu * math.sqrt(4.0 * mu_y + mu_y * mu_y)
            if np.random.random() > mu / (mu + x):
                x = mu * mu / x
    return x


@nb.njit(cache=True)
def _pg1(z):
    z = abs(z) * 0.5
    fz = 0.125 * math.pi * math.pi + 0.5 * z * z
    while True:
        if np.random.random() < _mass_texpon(z):
            x = _TRUNC + np.random.exponential(1.0) / fz
        else:
            x = _rtigauss(z)
        s = _pg_a(0, x)
        y = np.random.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _pg_a(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _pg_a(n, x)
                if y > s:
                    break


@nb.njit(cache=True)
def polya_gamma(z):
    """PG(1, z_i) draws, one per element of ``z``."""
    out = np.empty(z.size)
    for i in range(z.size):
        out[i] = _pg1(z[i])
    return out


@nb.njit(cache=True)
def _seed(s):
    np.random.seed(s)


def seed_polya_gamma(seed: int) -> None:
    _seed(np.uint32(seed))


# --------------------------------------------------------------------------
# Bayesian logistic volunteering model


@dataclass(frozen=True, eq=False)
class LogisticDraws:
    beta0: np.ndarray
    beta: np.ndarray  # (M, width of X*) coefficients
    sigma_beta: np.ndarray
    chain: np.ndarray
    design: ConstrainedDesign
    diagnostics: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.beta0.size

    def predict(self, x: np.ndarray) -> np.ndarray:
        xs = self.design.matrix(np.asarray(x, float))
        eta = self.beta0[:, None] + self.beta @ xs.T
        return 1.0 / (1.0 + np.exp(-eta))


def fit_bayes_logistic(x: np.ndarray, v: np.ndarray, schema: CovariateSchema,
                       config: Optional[BhmConfig] = None) -> LogisticDraws:
    """Polya-Gamma Gibbs sampler for logistic regression.

    Priors: intercept ~ Student-t(3, 0, 2.5) (as a normal scale mixture),
    coefficients ~ N(0, sigma_beta^2) with sum-to-zero per categorical block,
    sigma_beta ~ half-Normal(0, 2.5).  Continuous covariates are centered
    and scaled to SD 0.5.
    """
    config = config or BhmConfig()
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    if not (np.any(v == 1) and np.any(v == 0)):
        raise ModelError("volunteering model needs both volunteers and non-volunteers")
    design = ConstrainedDesign.build(schema, x, cont_sd=0.5)
    z = design.free(x)
    k = design.n_free
    n = v.size
    D = np.column_stack([np.ones(n), z])
    kappa = D.T @ (v - 0.5)
    s0 = 2.5
    root = np.random.SeedSequence(config.seed)
    out_b, out_s, chain_ids = [], [], []
    for c in range(config.chains):
        seq = np.random.SeedSequence([root.entropy, c])
        rng = np.random.default_rng(seq)
        seed_polya_gamma(int(seq.generate_state(2)[1]))
        theta = np.zeros(k + 1)
        lam0, s_beta = 1.0, 1.0
        for it in range(config.burn_in + config.kept * config.thin):
            omega = polya_gamma(D @ theta)
            prior = np.full(k + 1, 1.0 / s_beta**2)
            prior[0] = 1.0 / (s0**2 * lam0)
            theta = _mvn_prec((D.T * omega) @ D + np.diag(prior), kappa, rng)
            lam0 = 1.0 / rng.gamma(2.0, 1.0 / ((3.0 + theta[0] ** 2 / s0**2) / 2.0))
            s_beta = math.sqrt(_gig((1 - k) / 2, 1.0 / s0**2, float(theta[1:] @ theta[1:]), rng))
            if it >= config.burn_in and (it - config.burn_in + 1) % config.thin == 0:
                out_b.append(theta.copy())
                out_s.append(s_beta)
                chain_ids.append(c)
    theta = np.array(out_b)
    beta = theta[:, 1:] @ design.basis.T
    chain = np.array(chain_ids)
    diag = summarize({"beta0": theta[:, 0], "beta": beta, "sigma_beta": out_s}, chain) \
        if config.chains > 1 else {}
    _warn_rhat(diag, "volunteering model")
    return LogisticDraws(theta[:, 0], beta, np.array(out_s), chain, design, diag)


def fit_bayes_logistic_volunteering(dataset: Dataset, targets: Optional[Dataset] = None,
                                    config: Optional[BhmConfig] = None) -> np.ndarray:
    """(M, n_target) draws of P(V=1 | X), fit within the study region."""
    region = dataset.study_region
    fit = fit_bayes_logistic(dataset.x[region], dataset.v[region], dataset.schema, config)
    targets = dataset if targets is None else targets
    return fit.predict(targets.x)
