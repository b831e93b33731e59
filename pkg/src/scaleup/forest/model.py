"""BART and BCF fits built on the compiled tree kernels."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, stats

from ..config import BART_OUTCOME, BART_PROPENSITY, BCF_DEFAULT, McmcConfig
from ..core import Dataset, DataError, ModelError, NonFiniteError
from . import _kernels as K

KINDS = ("continuous", "binary", "categorical")


# --------------------------------------------------------------------------
# covariate binning


@dataclass(frozen=True, eq=False)
class Binner:
    """Maps covariates to small integer codes used by the tree kernels.

    Ordinal columns (continuous, binary) get cutpoints; a split ``bin <= c``
    is the rule ``x <= cuts[c]``.  Categorical columns keep their level code
    and remember which levels were seen in training.
    """

    kinds: tuple
    cuts: tuple
    seen: tuple
    names: tuple = ()

    @classmethod
    def fit(cls, X: np.ndarray, kinds: Sequence[str], grid: int = 100, names=None) -> "Binner":
        X = np.asarray(X, float)
        if X.ndim != 2 or X.shape[1] != len(kinds):
            raise DataError("covariate matrix and kinds disagree")
        if not np.all(np.isfinite(X)):
            raise NonFiniteError("covariates contain non-finite values")
        cuts, seen = [], []
        for j, kind in enumerate(kinds):
            if kind not in KINDS:
                raise DataError(f"unknown covariate kind {kind!r}")
            col = X[:, j]
            if kind == "categorical":
                codes = np.unique(col)
                if np.any(codes != np.round(codes)) or codes.min() < 0 or codes.max() > 62:
                    raise DataError("categorical codes must be integers in [0, 62]")
                cuts.append(None)
                seen.append(frozenset(int(c) for c in codes))
                continue
            u = np.unique(col)
            if u.size - 1 <= grid:
                c = u[:-1]
            else:
                probs = np.arange(1, grid + 1) / (grid + 1)
                c = np.unique(np.quantile(col, probs))
                c = c[c < u[-1]]
            cuts.append(c)
            seen.append(None)
        names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(len(kinds)))
        return cls(tuple(kinds), tuple(cuts), tuple(seen), names)

    @property
    def is_cat(self) -> np.ndarray:
        return np.array([k == "categorical" for k in self.kinds])

    @property
    def p(self) -> int:
        return len(self.kinds)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, float)
        if X.ndim != 2 or X.shape[1] != self.p:
            raise DataError(f"expected {self.p} covariate columns, got {X.shape[-1]}")
        if not np.all(np.isfinite(X)):
            raise NonFiniteError("covariates contain non-finite values")
        out = np.empty(X.shape, np.int32)
        for j in range(self.p):
            col = X[:, j]
            if self.cuts[j] is None:
                codes = col.astype(np.int64)
                unseen = set(np.unique(codes).tolist()) - self.seen[j]
                if unseen or np.any(codes != col):
                    raise DataError(
                        f"covariate {self.names[j]!r}: levels {sorted(unseen)} not seen in training"
                    )
                out[:, j] = codes
            else:
                out[:, j] = np.searchsorted(self.cuts[j], col, side="left")
        return out

    def threshold(self, j: int, rule: int):
        """Human-readable rule: numeric threshold or tuple of left levels."""
        if self.cuts[j] is None:
            return tuple(b for b in range(63) if (rule >> b) & 1)
        return float(self.cuts[j][rule])


def _onehot(X: np.ndarray, kinds) -> np.ndarray:
    cols = []
    for j, kind in enumerate(kinds):
        if kind == "categorical":
            codes = X[:, j].astype(int)
            for lv in np.unique(codes)[1:]:
                cols.append((codes == lv).astype(float))
        else:
            cols.append(X[:, j])
    return np.column_stack([np.ones(X.shape[0])] + cols)


def _sigma_hat2(design: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    """Weighted residual variance from a linear fit (normal equations with LU,
    which keeps the result exactly proportional to the weights)."""
    n, p = design.shape
    floor = 1e-6 * (np.sum(w) / n)
    if n > p + 1:
        xtw = design.T * w
        try:
            coef = linalg.solve(xtw @ design, xtw @ y, assume_a="gen")
            resid = y - design @ coef
            s2 = float(np.sum(w * resid * resid) / (n - p))
            if np.isfinite(s2):
                return max(s2, floor)
        except (linalg.LinAlgError, ValueError):
            pass
    mean = np.sum(w * y) / np.sum(w)
    return max(float(np.sum(w * (y - mean) ** 2) / max(n - 1, 1)), floor)


# --------------------------------------------------------------------------
# compact storage of kept forests


@dataclass(frozen=True, eq=False)
class ForestDraws:
    """All kept draws of one forest in breadth-first node arrays.

    Tree ``t`` of draw ``d`` starts at node ``starts[d * n_trees + t]``;
    internal nodes point to their left child (right child follows it).
    """

    var: np.ndarray
    rule: np.ndarray
    val: np.ndarray
    child: np.ndarray
    starts: np.ndarray
    n_trees: int
    n_draws: int

    @classmethod
    def from_chunks(cls, chunks, n_trees: int) -> "ForestDraws":
        sizes = [c[0].size for c in chunks]
        offs = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        var = np.concatenate([c[0] for c in chunks])
        rule = np.concatenate([c[1] for c in chunks])
        val = np.concatenate([c[2] for c in chunks])
        child = np.concatenate(
            [np.where(c[3] >= 0, c[3] + o, -1) for c, o in zip(chunks, offs)]
        ).astype(np.int32)
        starts = np.concatenate([c[4] + o for c, o in zip(chunks, offs)]).astype(np.int64)
        return cls(var, rule, val, child, starts, n_trees, len(chunks))

    def predict(self, Xb: np.ndarray, is_cat: np.ndarray) -> np.ndarray:
        return K.predict_draws(Xb, is_cat, self.var, self.rule, self.val, self.child,
                               self.starts, self.n_draws, self.n_trees)

    def predict_trees(self, Xb: np.ndarray, is_cat: np.ndarray, draw: int) -> np.ndarray:
        return K.predict_trees(Xb, is_cat, self.var, self.rule, self.val, self.child,
                               self.starts, draw, self.n_trees)

    def depth_histogram(self) -> dict:
        depths = K.leaf_depths(self.var, self.child, self.starts, self.var.size)
        counts = np.bincount(depths)
        return {int(d): int(c) for d, c in enumerate(counts) if c}

    def mean_leaves(self) -> float:
        return float(np.sum(self.var < 0) / (self.n_draws * self.n_trees))


# --------------------------------------------------------------------------
# chain runner


@dataclass
class _ForestSpec:
    Xb: np.ndarray
    is_cat: np.ndarray
    h: np.ndarray
    n_trees: int
    alpha: float
    beta: float
    leaf_sd: float
    min_eff: float


def _check_structure(state, leaf_of, tree_max, label):
    m, N = state.shape
    for t in range(m):
        counts = np.bincount(leaf_of[t], minlength=N)
        leaves = state[t] == K.LEAF
        if np.any(counts[leaves] == 0):
            raise AssertionError(f"{label} tree {t}: empty leaf")
        if np.any(counts[~leaves] != 0):
            raise AssertionError(f"{label} tree {t}: unit assigned to a non-leaf")
        for k in np.flatnonzero(state[t] == K.INTERNAL):
            if state[t, 2 * k + 1] == K.ABSENT or state[t, 2 * k + 2] == K.ABSENT:
                raise AssertionError(f"{label} tree {t}: internal node {k} lacks a child")
        if tree_max[t] < np.flatnonzero(state[t]).max():
            raise AssertionError(f"{label} tree {t}: stale extent")


def _run_chain(forests, y, wt, binary, nu, lam, sigma2_init, mcmc, seed, offset=0.0):
    K.seed_rng(np.uint32(seed))
    n = y.size
    N = 2 ** (mcmc.max_depth + 1) - 1
    width = 2 * N + 2  # room for children of the deepest nodes
    st = []
    for f in forests:
        m = f.n_trees
        state = np.zeros((m, width), np.int8)
        state[:, 0] = K.LEAF
        st.append(dict(
            state=state,
            var=np.full((m, width), -1, np.int32),
            rule=np.zeros((m, width), np.int64),
            val=np.zeros((m, width)),
            leaf_of=np.zeros((m, n), np.int32),
            tree_max=np.zeros(m, np.int64),
            ftot=np.zeros(n),
            counts=np.zeros((3, 2), np.int64),
        ))
    p_max = max(f.Xb.shape[1] for f in forests)
    r = np.empty(n)
    idx = np.empty(n, np.int64)
    lo = np.empty(p_max, np.int64)
    hi = np.empty(p_max, np.int64)
    mask = np.empty(p_max, np.int64)
    avail = np.empty(p_max, np.bool_)
    sA = np.empty(width)
    sB = np.empty(width)
    nodes = np.empty(width, np.int64)
    stats_buf = np.empty(8)
    sigma2 = 1.0 if binary else sigma2_init
    z = np.zeros(n)
    ybin = y.astype(np.int64)
    kept = [[] for _ in forests]
    sig = []
    total = mcmc.burn_in + mcmc.kept * mcmc.thin
    for it in range(total):
        fsum = st[0]["ftot"].copy()
        for s in st[1:]:
            fsum += s["ftot"]
        if binary:
            # latent z ~ N(offset + f, 1) truncated by the label
            K.draw_latent(z, ybin, fsum + offset)
            target = z - offset
        else:
            target = y
        for f, s in zip(forests, st):
            others = fsum - s["ftot"]
            K.update_forest(
                f.Xb, f.is_cat, f.h, wt, target - others, s["ftot"], s["state"], s["var"],
                s["rule"], s["val"], s["leaf_of"], s["tree_max"], sigma2, f.alpha, f.beta,
                f.leaf_sd, mcmc.max_depth, f.min_eff, r, idx, lo, hi, mask, avail, sA, sB,
                nodes, stats_buf, s["counts"],
            )
            fsum = others + s["ftot"]
        if not binary:
            sigma2 = K.draw_sigma2(target - fsum, wt, nu, lam)
        if mcmc.debug:
            for j, s in enumerate(st):
                _check_structure(s["state"], s["leaf_of"], s["tree_max"], f"forest {j}")
        if it >= mcmc.burn_in and (it - mcmc.burn_in + 1) % mcmc.thin == 0:
            for j, s in enumerate(st):
                kept[j].append(K.compact(s["state"], s["var"], s["rule"], s["val"],
                                         s["tree_max"]))
            sig.append(sigma2)
    counts = np.stack([s["counts"] for s in st])
    return kept, np.array(sig), counts


def _chain_seeds(seed: Optional[int], chains: int) -> list:
    base = np.random.SeedSequence(seed)
    return [int(np.random.SeedSequence([base.entropy, c]).generate_state(1)[0])
            for c in range(chains)]


def _run_chains(forests, y, wt, binary, nu, lam, sigma2_init, mcmc, offset=0.0):
    seeds = _chain_seeds(mcmc.seed, mcmc.chains)
    jobs = min(mcmc.jobs, mcmc.chains)
    args = (forests, y, wt, binary, nu, lam, sigma2_init, mcmc)
    if jobs == 1:
        outs = [_run_chain(*args, s, offset) for s in seeds]
    else:
        from joblib import Parallel, delayed

        outs = Parallel(n_jobs=jobs)(delayed(_run_chain)(*args, s, offset) for s in seeds)
    draws = []
    for j, f in enumerate(forests):
        chunks = [c for out in outs for c in out[0][j]]
        draws.append(ForestDraws.from_chunks(chunks, f.n_trees))
    sigma2 = np.concatenate([out[1] for out in outs])
    counts = sum(out[2] for out in outs)
    chain = np.repeat(np.arange(mcmc.chains), mcmc.kept)
    return draws, sigma2, counts, chain


def _accept_summary(counts) -> dict:
    names = ("grow", "prune", "change")
    out = {}
    for j, c in enumerate(counts):
        out[f"forest{j}"] = {
            nm: (float(c[k, 1] / c[k, 0]) if c[k, 0] else None) for k, nm in enumerate(names)
        }
    return out


def _check_weights(weights, n) -> np.ndarray:
    wt = np.ones(n) if weights is None else np.asarray(weights, float)
    if wt.shape != (n,):
        raise DataError("likelihood weights have the wrong length")
    if not np.all(np.isfinite(wt)) or np.any(wt <= 0):
        raise ModelError("likelihood weights must be positive and finite")
    return wt


# --------------------------------------------------------------------------
# BART


@dataclass(frozen=True, eq=False)
class BartFit:
    """Kept draws of a sum-of-trees model.

    ``predict`` returns draws of the mean function on the original scale
    (probabilities for a binary target).
    """

    forest: ForestDraws
    sigma: np.ndarray
    binner: Binner
    binary: bool
    center: float
    scale: float
    offset: float
    config: McmcConfig
    accept: dict
    chain: np.ndarray
    treatment_col: Optional[int] = None

    @property
    def M(self) -> int:
        return self.forest.n_draws

    @property
    def n_trees(self) -> int:
        return self.forest.n_trees

    def predict_latent(self, X: np.ndarray) -> np.ndarray:
        """Sum-of-trees draws on the internal scale."""
        return self.forest.predict(self.binner.transform(X), self.binner.is_cat)

    def predict(self, X: np.ndarray) -> np.ndarray:
        f = self.predict_latent(X)
        if self.binary:
            return stats.norm.cdf(self.offset + f)
        return self.center + self.scale * f

    def summary(self) -> dict:
        return _summary(self.sigma, {"trees": self.forest}, self.accept, self.config)


def _summary(sigma, forests, accept, config) -> dict:
    out = {"draws": int(sigma.size), "accept": accept, "config": config.to_dict()}
    if np.all(np.isfinite(sigma)):
        q = np.quantile(sigma, [0.05, 0.25, 0.5, 0.75, 0.95])
        out["sigma_quantiles"] = dict(zip(["q05", "q25", "q50", "q75", "q95"], map(float, q)))
    for name, fd in forests.items():
        out[name] = {"n_trees": fd.n_trees, "mean_leaves": fd.mean_leaves(),
                     "leaf_depth_histogram": fd.depth_histogram()}
    return out


def _kinds_of(dataset: Dataset) -> list:
    return [c.kind for c in dataset.schema.covariates]


def fit_bart(X, y=None, *, kinds=None, weights=None, binary: bool = False,
             config: Optional[McmcConfig] = None, names=None,
             treatment_col: Optional[int] = None) -> BartFit:
    """Fit BART to a continuous (Gaussian) or binary (probit) target.

    Parameters
    ----------
    X : (n, p) covariate matrix, or a Dataset (then ``y`` may name a column
        such as ``"y"`` or ``"v"`` and kinds come from its schema)
    y : target vector or column name
    kinds : per-column kind ("continuous", "binary", "categorical");
        categorical columns hold integer level codes
    weights : likelihood weights; unit ``i`` has residual variance
        ``sigma^2 / weights[i]`` (Gaussian target only)
    binary : use the probit latent-variable sampler
    treatment_col : column holding the treatment indicator, used by
        ``predict_tau``
    """
    if isinstance(X, Dataset):
        ds = X
        names = names or ds.schema.names
        kinds = kinds or _kinds_of(ds)
        y = getattr(ds, y or "y") if isinstance(y, (str, type(None))) else y
        X = ds.x
    config = config or (BART_PROPENSITY if binary else BART_OUTCOME)
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n = y.size
    if X.shape[0] != n:
        raise DataError("covariates and target differ in length")
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("target has non-finite values")
    kinds = list(kinds) if kinds is not None else ["continuous"] * X.shape[1]
    binner = Binner.fit(X, kinds, config.grid, names)
    Xb = binner.transform(X)
    m = config.n_trees_mu
    if binary:
        if weights is not None:
            raise ModelError("likelihood weights apply to Gaussian targets only")
        if not np.all((y == 0) | (y == 1)):
            raise ModelError("binary target must be 0/1")
        pbar = y.mean()
        if pbar in (0.0, 1.0):
            raise ModelError("binary target has a single class")
        wt = np.ones(n)
        offset = float(stats.norm.ppf(pbar))
        center, scale = 0.0, 1.0
        target = y
        leaf_sd = 3.0 / (config.k * np.sqrt(m))
        nu = lam = s2 = 1.0
    else:
        wt = _check_weights(weights, n)
        offset = 0.0
        lo_, hi_ = float(y.min()), float(y.max())
        scale = hi_ - lo_ if hi_ > lo_ else 1.0
        center = lo_ + 0.5 * (hi_ - lo_)
        target = (y - center) / scale
        leaf_sd = 0.5 / (config.k * np.sqrt(m))
        s2 = _sigma_hat2(_onehot(X, kinds), target, wt)
        nu = config.nu
        lam = s2 * stats.chi2.ppf(1 - config.q, nu) / nu
    spec = _ForestSpec(Xb, binner.is_cat, np.ones(n), m, config.alpha, config.beta,
                       leaf_sd, 1.0)
    (forest,), sigma2, counts, chain = _run_chains(
        [spec], target, wt, binary, nu, lam, s2, config, offset)
    sigma = np.full(sigma2.size, np.nan) if binary else scale * np.sqrt(sigma2)
    return BartFit(forest, sigma, binner, binary, center, scale, offset, config,
                   _accept_summary(counts), chain, treatment_col)


def fit_bart_volunteering(dataset: Dataset, targets: Optional[Dataset] = None,
                          config: Optional[McmcConfig] = None) -> np.ndarray:
    """Probit BART for volunteering within the study region.

    Returns an (M, n_target) matrix of P(V=1 | X) draws for ``targets``
    (default: every unit of ``dataset``).
    """
    region = dataset.study_region
    v = dataset.v[region]
    if not (np.any(v == 1) and np.any(v == 0)):
        raise ModelError("study region needs both volunteers and non-volunteers")
    fit = fit_bart(dataset.x[region], v.astype(float), kinds=_kinds_of(dataset),
                   binary=True, config=config or BART_PROPENSITY, names=dataset.schema.names)
    targets = dataset if targets is None else targets
    return fit.predict(targets.x)


# --------------------------------------------------------------------------
# BCF


@dataclass(frozen=True, eq=False)
class BcfFit:
    """Kept draws of ``y = mu(x, pi_a) + tau(x) a + e`` with
    ``Var(e_i) = sigma^2 / w_i``."""

    mu_forest: ForestDraws
    tau_forest: ForestDraws
    sigma: np.ndarray
    mu_binner: Binner
    tau_binner: Binner
    center: float
    scale: float
    mu_cols: np.ndarray
    tau_cols: np.ndarray
    include_pi_s: bool
    config: McmcConfig
    accept: dict
    chain: np.ndarray

    @property
    def M(self) -> int:
        return self.tau_forest.n_draws

    @property
    def n_tau_covariates(self) -> int:
        return self.tau_binner.p

    def _tau_design(self, X, pi_s):
        X = np.asarray(X, float)
        cols = [X[:, self.tau_cols]]
        if self.include_pi_s:
            if pi_s is None:
                raise ModelError("this fit uses the study-selection propensity; pass pi_s")
            cols.append(np.asarray(pi_s, float)[:, None])
        return np.hstack(cols)

    def predict_tau(self, X, pi_s=None) -> np.ndarray:
        Xt = self._tau_design(X, pi_s)
        return self.scale * self.tau_forest.predict(self.tau_binner.transform(Xt),
                                                    self.tau_binner.is_cat)

    def predict_mu(self, X, pi_a) -> np.ndarray:
        X = np.asarray(X, float)
        Xm = np.hstack([X[:, self.mu_cols], np.asarray(pi_a, float)[:, None]])
        f = self.mu_forest.predict(self.mu_binner.transform(Xm), self.mu_binner.is_cat)
        return self.center + self.scale * f

    def predict_outcome(self, X, a, pi_a, pi_s=None) -> np.ndarray:
        return self.predict_mu(X, pi_a) + self.predict_tau(X, pi_s) * np.asarray(a, float)

    def unit_sigma(self, weights) -> np.ndarray:
        """(M, n) residual SDs ``sigma / sqrt(w_i)``."""
        return self.sigma[:, None] / np.sqrt(np.asarray(weights, float))[None, :]

    def summary(self) -> dict:
        return _summary(self.sigma, {"mu_trees": self.mu_forest, "tau_trees": self.tau_forest},
                        self.accept, self.config)


def fit_bcf(X, y, a, pi_a, *, kinds=None, weights=None, include_pi_s: bool = False,
            pi_s=None, config: Optional[McmcConfig] = None, names=None,
            mu_cols=None, tau_cols=None) -> BcfFit:
    """Fit a Bayesian causal forest.

    The prognostic forest sees ``X[:, mu_cols]`` plus ``pi_a``; the effect
    forest sees ``X[:, tau_cols]`` plus ``pi_s`` when ``include_pi_s``.
    The outcome is standardized internally; predictions are returned on the
    original scale.
    """
    config = config or BCF_DEFAULT
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    a = np.asarray(a, float)
    pi_a = np.asarray(pi_a, float)
    n = y.size
    if X.shape[0] != n or a.shape != (n,) or pi_a.shape != (n,):
        raise DataError("covariates, outcome, treatment and pi_a differ in length")
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("outcome has non-finite values")
    if not np.all((a == 0) | (a == 1)):
        raise DataError("treatment must be 0/1")
    if not (a.any() and (1 - a).any()):
        raise ModelError("both treatment arms are needed")
    if not np.all((pi_a > 0) & (pi_a < 1)):
        raise ModelError("pi_a must lie strictly inside (0, 1)")
    kinds = list(kinds) if kinds is not None else ["continuous"] * X.shape[1]
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    mu_cols = np.arange(X.shape[1]) if mu_cols is None else np.asarray(mu_cols, int)
    tau_cols = np.arange(X.shape[1]) if tau_cols is None else np.asarray(tau_cols, int)
    wt = _check_weights(weights, n)

    Xm = np.hstack([X[:, mu_cols], pi_a[:, None]])
    mu_kinds = [kinds[j] for j in mu_cols] + ["continuous"]
    mu_binner = Binner.fit(Xm, mu_kinds, config.grid, [names[j] for j in mu_cols] + ["pi_a"])
    Xt = X[:, tau_cols]
    tau_kinds = [kinds[j] for j in tau_cols]
    tau_names = [names[j] for j in tau_cols]
    if include_pi_s:
        if pi_s is None:
            raise ModelError("include_pi_s needs a pi_s column")
        pi_s = np.asarray(pi_s, float)
        if pi_s.shape != (n,) or not np.all((pi_s >= 0) & (pi_s <= 1)):
            raise ModelError("pi_s must be probabilities, one per unit")
        Xt = np.hstack([Xt, pi_s[:, None]])
        tau_kinds.append("continuous")
        tau_names.append("pi_s")
    if Xt.shape[1] == 0:
        Xt = np.zeros((n, 1))
        tau_kinds, tau_names = ["continuous"], ["(none)"]
    tau_binner = Binner.fit(Xt, tau_kinds, config.grid, tau_names)

    center = float(np.mean(y))
    sd = float(np.std(y))
    scale = sd if sd > 0 else 1.0
    target = (y - center) / scale
    s2 = _sigma_hat2(np.column_stack([_onehot(X, kinds), a]), target, wt)
    nu = config.nu
    lam = s2 * stats.chi2.ppf(1 - config.q, nu) / nu
    mu_spec = _ForestSpec(mu_binner.transform(Xm), mu_binner.is_cat, np.ones(n),
                          config.n_trees_mu, config.alpha, config.beta,
                          2.0 / np.sqrt(config.n_trees_mu), 1.0)
    tau_spec = _ForestSpec(tau_binner.transform(Xt), tau_binner.is_cat, a,
                           config.n_trees_tau, config.alpha_tau, config.beta_tau,
                           1.0 / np.sqrt(config.n_trees_tau), 1.0)
    (mu_f, tau_f), sigma2, counts, chain = _run_chains(
        [mu_spec, tau_spec], target, wt, False, nu, lam, s2, config)
    return BcfFit(mu_f, tau_f, scale * np.sqrt(sigma2), mu_binner, tau_binner, center, scale,
                  mu_cols, tau_cols, include_pi_s, config, _accept_summary(counts), chain)


def predict_tau(fit, X, pi_s=None) -> np.ndarray:
    """(M, n) effect draws.

    For BCF this is the effect forest alone.  For BART it is
    ``f(x, a=1) - f(x, a=0)``, with ``X`` holding the covariates without the
    treatment column.
    """
    if isinstance(fit, BcfFit):
        return fit.predict_tau(X, pi_s)
    if isinstance(fit, BartFit):
        if fit.treatment_col is None:
            raise ModelError("BART fit has no treatment column")
        X = np.asarray(X, float)
        n = X.shape[0]
        x1 = np.insert(X, fit.treatment_col, np.ones(n), axis=1)
        x0 = np.insert(X, fit.treatment_col, np.zeros(n), axis=1)
        return fit.predict(x1) - fit.predict(x0)
    raise TypeError(f"cannot predict effects from {type(fit).__name__}")
