"""Fit-the-fit subgroup discovery: a pruned regression tree on per-unit
posterior summaries, plus posterior uncertainty for the chosen subgroups."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (DataError, EstimateResult, NonFiniteError, PosteriorDraws, _subset_mask,
                   aggregate_tcatt)


@dataclass
class CartNode:
    n: int
    value: float
    sse: float
    feature: Optional[int] = None
    threshold: Optional[float] = None  # ordinal: x <= threshold goes left
    left_levels: Optional[tuple] = None  # categorical: these levels go left
    improvement: float = 0.0  # (parent SSE - children SSE) / root SSE
    left: Optional["CartNode"] = None
    right: Optional["CartNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def goes_left(self, x: np.ndarray) -> np.ndarray:
        col = x[:, self.feature]
        if self.left_levels is not None:
            return np.isin(col, self.left_levels)
        return col <= self.threshold


@dataclass
class CartTree:
    root: CartNode
    names: list
    kinds: list
    complexity: float
    min_leaf: int
    root_sse: float
    levels: dict = field(default_factory=dict)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        out = np.empty(x.shape[0])
        self._fill(self.root, x, np.arange(x.shape[0]), out)
        return out

    def _fill(self, node, x, idx, out):
        if node.is_leaf:
            out[idx] = node.value
            return
        left = node.goes_left(x[idx])
        self._fill(node.left, x, idx[left], out)
        self._fill(node.right, x, idx[~left], out)

    def splits(self) -> list:
        """Internal nodes in depth-first order."""
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                out.append(node)
                stack.extend([node.right, node.left])
        return out

    def leaves(self) -> list:
        """(rule description, node) for every leaf."""
        out = []

        def walk(node, rule):
            if node.is_leaf:
                out.append((" & ".join(rule) or "all units", node))
                return
            lrule, rrule = self._describe(node)
            walk(node.left, rule + [lrule])
            walk(node.right, rule + [rrule])

        walk(self.root, [])
        return out

    def _describe(self, node):
        name = self.names[node.feature]
        if node.left_levels is not None:
            labels = self.levels.get(name)
            lv = [labels[int(v)] if labels else str(int(v)) for v in node.left_levels]
            return f"{name} in {{{', '.join(lv)}}}", f"{name} not in {{{', '.join(lv)}}}"
        return f"{name} <= {node.threshold:g}", f"{name} > {node.threshold:g}"

    def sse(self) -> float:
        return float(sum(node.sse for _, node in self.leaves()))

    def to_dict(self) -> dict:
        def conv(node):
            d = {"n": node.n, "value": node.value, "sse": node.sse}
            if not node.is_leaf:
                d["feature"] = self.names[node.feature]
                if node.left_levels is not None:
                    d["left_levels"] = [float(v) for v in node.left_levels]
                else:
                    d["threshold"] = node.threshold
                d["improvement"] = node.improvement
                d["left"] = conv(node.left)
                d["right"] = conv(node.right)
            return d

        return {"complexity": self.complexity, "min_leaf": self.min_leaf,
                "root_sse": self.root_sse, "tree": conv(self.root),
                "subgroups": [{"rule": r, "n": nd.n, "value": nd.value}
                              for r, nd in self.leaves()]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _sse(s, s2, n):
    return s2 - s * s / n if n else 0.0


def _best_split(x, y, kinds, min_leaf):
    n = y.size
    total, total2 = y.sum(), (y * y).sum()
    parent = _sse(total, total2, n)
    best = (0.0, None, None, None)  # gain, feature, threshold, left levels
    for j, kind in enumerate(kinds):
        col = x[:, j]
        if kind == "categorical":
            levels = np.unique(col)
            if levels.size < 2:
                continue
            means = np.array([y[col == lv].mean() for lv in levels])
            order = levels[np.argsort(means, kind="stable")]
            rank = {lv: k for k, lv in enumerate(order)}
            r = np.array([rank[v] for v in col])
            srt = np.argsort(r, kind="stable")
            cuts = np.flatnonzero(np.diff(r[srt])) + 1
            ys = y[srt]
            cs, cs2 = np.cumsum(ys), np.cumsum(ys * ys)
            for c in cuts:
                if c < min_leaf or n - c < min_leaf:
                    continue
                gain = parent - _sse(cs[c - 1], cs2[c - 1], c) - _sse(
                    total - cs[c - 1], total2 - cs2[c - 1], n - c)
                if gain > best[0]:
                    best = (gain, j, None, tuple(order[: r[srt][c - 1] + 1]))
            continue
        srt = np.argsort(col, kind="stable")
        xs, ys = col[srt], y[srt]
        cs, cs2 = np.cumsum(ys), np.cumsum(ys * ys)
        cuts = np.flatnonzero(np.diff(xs)) + 1
        cuts = cuts[(cuts >= min_leaf) & (n - cuts >= min_leaf)]
        if cuts.size == 0:
            continue
        left = cs2[cuts - 1] - cs[cuts - 1] ** 2 / cuts
        rs, rs2 = total - cs[cuts - 1], total2 - cs2[cuts - 1]
        right = rs2 - rs * rs / (n - cuts)
        gains = parent - left - right
        k = int(np.argmax(gains))
        if gains[k] > best[0]:
            c = cuts[k]
            best = (float(gains[k]), j, 0.5 * (xs[c - 1] + xs[c]), None)
    return best


def fit_the_fit(x: np.ndarray, target: np.ndarray, kinds: Optional[Sequence[str]] = None,
                names: Optional[Sequence[str]] = None, complexity: float = 0.1,
                min_leaf: int = 50, max_depth: int = 30, levels: Optional[dict] = None
                ) -> CartTree:
    """Greedy least-squares regression tree with complexity pruning.

    A split is kept only when it lowers the SSE by at least ``complexity``
    times the root SSE; each child must hold ``min_leaf`` units.  A constant
    target gives a root-only tree.
    """
    x = np.asarray(x, float)
    y = np.asarray(target, float)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise DataError("covariates and target differ in length")
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("fit-the-fit target has non-finite values")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("covariates contain non-finite values")
    kinds = list(kinds) if kinds is not None else ["continuous"] * x.shape[1]
    names = list(names) if names is not None else [f"x{j}" for j in range(x.shape[1])]
    # a zero-range target is pure even when round-off leaves a tiny SSE
    root_sse = float(np.sum((y - y.mean()) ** 2)) if np.ptp(y) > 0 else 0.0

    def grow(idx, depth):
        yy = y[idx]
        node = CartNode(int(idx.size), float(yy.mean()), float(np.sum((yy - yy.mean()) ** 2)))
        if (depth >= max_depth or root_sse <= 0 or idx.size < 2 * min_leaf
                or np.ptp(yy) == 0):
            return node
        gain, j, thr, lv = _best_split(x[idx], yy, kinds, min_leaf)
        if j is None or gain / root_sse < complexity:
            return node
        node.feature, node.threshold, node.left_levels = j, thr, lv
        node.improvement = float(gain / root_sse)
        left = node.goes_left(x[idx])
        node.left = grow(idx[left], depth + 1)
        node.right = grow(idx[~left], depth + 1)
        return node

    root = grow(np.arange(y.size), 0)
    return CartTree(root, names, kinds, complexity, min_leaf, root_sse, dict(levels or {}))


def offset_probability(tau_draws: np.ndarray, threshold: float) -> np.ndarray:
    """Per-unit share of effect draws below ``-threshold`` (savings that
    offset a fee of ``threshold``)."""
    return np.mean(np.asarray(tau_draws, float) < -threshold, axis=0)


@dataclass(frozen=True)
class SubgroupSummary:
    result: EstimateResult
    exceedance: float
    threshold: float
    n_units: int


def subgroup_uncertainty(draws: PosteriorDraws, subset, threshold: float,
                         level: float = 0.90) -> SubgroupSummary:
    """Posterior subgroup effect and the probability that it is below
    ``-threshold``."""
    res = aggregate_tcatt(draws, subset, level)
    exceed = float(np.mean(res.draws < -threshold))
    n_units = int(np.sum(_mask(draws, subset)))
    return SubgroupSummary(res, exceed, float(threshold), n_units)


def _mask(draws, subset):
    return _subset_mask(draws, subset)


def root_split_stability(x, target, kinds=None, names=None, complexity: float = 0.1,
                         min_leaf: int = 50, B: int = 100, seed: int = 0) -> float:
    """Share of bootstrap refits whose root split uses the same covariate."""
    x = np.asarray(x, float)
    y = np.asarray(target, float)
    base = fit_the_fit(x, y, kinds, names, complexity, min_leaf)
    ref = base.root.feature
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(B):
        idx = rng.integers(0, y.size, y.size)
        t = fit_the_fit(x[idx], y[idx], kinds, names, complexity, min_leaf)
        hits += t.root.feature == ref
    return hits / B
