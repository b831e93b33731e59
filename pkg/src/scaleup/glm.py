"""Weighted least squares, logistic regression by IRLS and the bootstrap."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import expit

from .core import Dataset, ModelError


class RankDeficiencyError(ModelError):
    prefix = "rank deficiency"


class SeparationError(ModelError):
    prefix = "separation"


class BootstrapError(ModelError):
    prefix = "bootstrap failure"


@dataclass(frozen=True)
class LinearFit:
    coef: np.ndarray
    names: list
    resid_var: float
    n: int

    def predict(self, design: np.ndarray) -> np.ndarray:
        return design @ self.coef

    def get(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])


@dataclass(frozen=True)
class LogisticFit:
    coef: np.ndarray
    names: list
    converged: bool
    n_iter: int
    grad_norm: float

    def predict(self, design: np.ndarray) -> np.ndarray:
        return expit(design @ self.coef)


def _column_scale(X: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.mean(X * X, axis=0))
    scale[scale == 0] = 1.0
    return scale


def _collinear_columns(Xs: np.ndarray, names: Sequence[str]) -> list:
    _, sv, vt = np.linalg.svd(Xs, full_matrices=False)
    tol = max(Xs.shape) * np.finfo(float).eps * sv[0]
    null = vt[sv <= max(tol, 1e-9 * sv[0])]
    involved = np.any(np.abs(null) > 1e-6, axis=0)
    return [names[j] for j in np.flatnonzero(involved)]


def wls(X: np.ndarray, y: np.ndarray, weights: Optional[np.ndarray] = None,
        names: Optional[Sequence[str]] = None) -> LinearFit:
    """Minimize ``sum w_i (y_i - x_i b)^2``.

    Columns are rescaled to unit root-mean-square before solving and the
    coefficients mapped back, so units of the covariates do not affect
    conditioning.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, p = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ModelError("regression weights must be positive and finite")
    if n <= p:
        raise RankDeficiencyError(f"{n} rows for {p} columns")
    scale = _column_scale(X)
    sw = np.sqrt(w)
    Xs = (X / scale) * sw[:, None]
    q, rmat = np.linalg.qr(Xs)
    diag = np.abs(np.diag(rmat))
    if diag.min() <= max(n, p) * np.finfo(float).eps * diag.max() * 10:
        bad = _collinear_columns(Xs, names)
        raise RankDeficiencyError(f"collinear design columns: {', '.join(bad)}")
    gamma = linalg.solve_triangular(rmat, q.T @ (y * sw))
    coef = gamma / scale
    resid = y - X @ coef
    resid_var = float(np.sum(w * resid**2) / (n - p))
    return LinearFit(coef, names, resid_var, n)


def logistic_irls(X: np.ndarray, y: np.ndarray, weights: Optional[np.ndarray] = None,
                  names: Optional[Sequence[str]] = None, tol: float = 1e-8,
                  max_iter: int = 100, ridge: float = 1e-8) -> LogisticFit:
    """Maximum likelihood logistic regression by Newton/IRLS.

    Stops when the max-norm of the score ``X'W(y - p)`` is at most ``tol``.
    A tiny ridge is added to the information only when its Cholesky
    factorization fails.  Raises SeparationError when fitted linear
    predictors diverge.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, p = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    if not np.all((y == 0) | (y == 1)):
        raise ModelError("logistic target must be binary")
    if n <= p:
        raise RankDeficiencyError(f"{n} rows for {p} columns")
    scale = _column_scale(X)
    Xs = X / scale
    beta = np.zeros(p)

    def loglik(b):
        eta = Xs @ b
        return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))

    ll = loglik(beta)
    converged = False
    steps = 0
    while True:
        prob = expit(Xs @ beta)
        grad = Xs.T @ (w * (y - prob))
        grad_norm = float(np.max(np.abs(grad / scale)))
        if grad_norm <= tol:
            converged = True
            break
        if steps == max_iter:
            break
        steps += 1
        info = (Xs * (w * prob * (1 - prob))[:, None]).T @ Xs
        try:
            step = linalg.cho_solve(linalg.cho_factor(info), grad)
        except linalg.LinAlgError:
            step = linalg.solve(info + ridge * np.eye(p), grad, assume_a="sym")
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            ll_new = loglik(cand)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        beta, ll = cand, ll_new
    eta = Xs @ beta
    if np.max(np.abs(eta)) > 30:
        bad = [names[j] for j in np.argsort(-np.abs(beta))[:3]]
        raise SeparationError(
            f"fitted linear predictor diverges (|eta| up to {np.max(np.abs(eta)):.0f}); "
            f"likely separation on {', '.join(bad)}"
        )
    return LogisticFit(beta / scale, names, converged, steps, grad_norm)


# --------------------------------------------------------------------------
# dataset-level wrappers


def treatment_design(xd: np.ndarray, a: np.ndarray, names: Sequence[str]):
    """``[1, X, A, X*A]`` design with column names."""
    n = xd.shape[0]
    a = np.asarray(a, float)
    mat = np.column_stack([np.ones(n), xd, a, xd * a[:, None]])
    cols = ["(intercept)"] + list(names) + ["A"] + [f"{c}:A" for c in names]
    return mat, cols


def intercept_design(xd: np.ndarray, names: Sequence[str]):
    return np.column_stack([np.ones(xd.shape[0]), xd]), ["(intercept)"] + list(names)


def fit_wls(dataset: Dataset, weights=None, rows=None) -> LinearFit:
    """Outcome regression of y on X, A and every X*A interaction.

    ``weights`` default to ``n_bene``; ``rows`` selects units (default: the
    study sample).
    """
    rows = dataset.study if rows is None else rows
    xd, names, _ = dataset.design("reference", rows)
    design, cols = treatment_design(xd, dataset.a[rows], names)
    w = dataset.n_bene[rows] if weights is None else np.asarray(weights, float)
    return wls(design, dataset.y[rows], w, cols)


def fit_logistic(dataset: Dataset, target: str, rows=None) -> LogisticFit:
    """Logistic regression of an indicator column (``a``, ``s``, ``r``, ``v``) on X."""
    rows = np.ones(dataset.n, bool) if rows is None else rows
    yv = getattr(dataset, target)[rows].astype(float)
    if np.any(yv < 0):
        raise ModelError(f"column {target!r} has unknown values in the fitted rows")
    xd, names, _ = dataset.design("reference", rows)
    design, cols = intercept_design(xd, names)
    return logistic_irls(design, yv, names=cols)


def predict_logistic(fit: LogisticFit, dataset: Dataset, rows=None) -> np.ndarray:
    xd, names, _ = dataset.design("reference", rows)
    design, _ = intercept_design(xd, names)
    return fit.predict(design)


# --------------------------------------------------------------------------
# bootstrap


@dataclass(frozen=True)
class BootstrapDraws:
    values: np.ndarray
    failed: list = field(default_factory=list)
    B: int = 0

    @property
    def fail_rate(self) -> float:
        return len(self.failed) / self.B if self.B else 0.0


def strata_labels(dataset: Dataset) -> np.ndarray:
    """Resampling strata: (s, a) cells and volunteer status within each region."""
    return (dataset.s.astype(int) * 1000 + dataset.a.astype(int) * 100
            + dataset.r.astype(int) * 10 + (dataset.v.astype(int) + 1))


def resample_indices(strata: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw with replacement inside each stratum; stratum sizes preserved."""
    out = np.empty(strata.size, dtype=np.int64)
    for lab in np.unique(strata):
        members = np.flatnonzero(strata == lab)
        out[members] = members[rng.integers(0, members.size, members.size)]
    return out


def _one_resample(estimator, dataset, strata, seq):
    rng = np.random.default_rng(seq)
    idx = resample_indices(strata, rng) if strata is not None else rng.integers(
        0, dataset.n, dataset.n)
    try:
        val = float(estimator(dataset.take(idx)))
        if not np.isfinite(val):
            raise ModelError("non-finite estimate")
        return val
    except Exception:  # counted, reported by the caller
        return None


def bootstrap(estimator: Callable[[Dataset], float], dataset: Dataset, B: int = 900,
              rng: Optional[np.random.Generator] = None, seed: Optional[int] = None,
              stratified: bool = True, jobs: int = 1, max_fail: float = 0.05) -> BootstrapDraws:
    """Re-run ``estimator`` on ``B`` resamples of the whole dataset.

    Each resample gets its own seed-sequence child, so results do not depend
    on ``jobs``.  Failed resamples are recorded; more than ``max_fail`` of
    them raises BootstrapError.
    """
    if seed is None:
        rng = rng if rng is not None else np.random.default_rng()
        seed = int(rng.integers(0, 2**63 - 1))
    children = np.random.SeedSequence(seed).spawn(B)
    strata = strata_labels(dataset) if stratified else None
    if jobs == 1:
        vals = [_one_resample(estimator, dataset, strata, c) for c in children]
    else:
        from joblib import Parallel, delayed

        vals = Parallel(n_jobs=jobs)(
            delayed(_one_resample)(estimator, dataset, strata, c) for c in children
        )
    failed = [b for b, v in enumerate(vals) if v is None]
    if len(failed) > max_fail * B:
        raise BootstrapError(f"{len(failed)} of {B} bootstrap resamples failed")
    values = np.array([v for v in vals if v is not None])
    return BootstrapDraws(values, failed, B)
