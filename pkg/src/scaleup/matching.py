"""Treatment propensity scores and greedy k:1 nearest-neighbour matching."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .core import Dataset, DataError, ModelError
from .glm import intercept_design, logistic_irls


class MatchingError(ModelError):
    prefix = "matching error"


@dataclass(frozen=True)
class MatchResult:
    pairs: dict  # treated id -> list of control ids
    scores: dict  # unit id -> propensity score
    unmatched: list = field(default_factory=list)

    @property
    def controls(self) -> list:
        return [c for cs in self.pairs.values() for c in cs]

    def to_json(self) -> str:
        return json.dumps({"pairs": self.pairs, "scores": self.scores,
                           "unmatched": self.unmatched}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MatchResult":
        obj = json.loads(text)
        return cls(obj["pairs"], obj["scores"], obj["unmatched"])


def propensity_scores(xd: np.ndarray, names, treated: np.ndarray) -> np.ndarray:
    """Logistic regression of a 0/1 candidacy indicator on covariates."""
    design, cols = intercept_design(xd, names)
    fit = logistic_irls(design, treated.astype(float), names=cols)
    return fit.predict(design)


def fit_treatment_propensity(dataset: Dataset) -> np.ndarray:
    """Scores for study-region volunteers (treated candidates) versus units
    of the non-study region (candidate controls); NaN for other units."""
    treated = (dataset.r == 1) & (dataset.v == 1)
    pool = dataset.r == 0
    rows = treated | pool
    if not treated.any() or not pool.any():
        raise DataError("need both treated candidates and candidate controls")
    xd, names, _ = dataset.design("reference", rows)
    out = np.full(dataset.n, np.nan)
    out[rows] = propensity_scores(xd, names, treated[rows])
    return out


@numba.njit(cache=True)
def _greedy(t_scores, t_order, c_scores, c_ids_rank, k, caliper):
    # controls sorted by score; scan outward from the insertion point
    nc = c_scores.size
    used = np.zeros(nc, np.bool_)
    out = np.full((t_scores.size, k), -1, np.int64)
    chosen = np.empty(k, np.int64)
    for t in t_order:
        x = t_scores[t]
        pos = np.searchsorted(c_scores, x)
        got = 0
        left = pos - 1
        right = pos
        while got < k:
            while left >= 0 and used[left]:
                left -= 1
            while right < nc and used[right]:
                right += 1
            if left < 0 and right >= nc:
                break
            dl = np.inf if left < 0 else x - c_scores[left]
            dr = np.inf if right >= nc else c_scores[right] - x
            best = min(dl, dr)
            if best > caliper:
                break
            # among all available controls at distance `best`, take lowest id
            pick = -1
            j = left
            while j >= 0 and (used[j] or x - c_scores[j] == best):
                if not used[j] and (pick < 0 or c_ids_rank[j] < c_ids_rank[pick]):
                    pick = j
                j -= 1
            j = right
            while j < nc and (used[j] or c_scores[j] - x == best):
                if not used[j] and (pick < 0 or c_ids_rank[j] < c_ids_rank[pick]):
                    pick = j
                j += 1
            used[pick] = True
            chosen[got] = pick
            got += 1
        if got < k:
            for g in range(got):
                used[chosen[g]] = False
        else:
            for g in range(k):
                out[t, g] = chosen[g]
    return out


def match_controls(treated_scores, control_scores, k: int = 4,
                   treated_ids=None, control_ids=None,
                   caliper: Optional[float] = None) -> MatchResult:
    """Greedy nearest-neighbour matching on the score, without replacement.

    Treated units are processed in descending score order (ties by position);
    each takes its ``k`` closest still-available controls, distance ties going
    to the lowest control id.  With a caliper, treated units that cannot find
    ``k`` controls within it are reported as unmatched and take none.
    """
    ts = np.asarray(treated_scores, float)
    cs = np.asarray(control_scores, float)
    tids = [str(i) for i in (range(ts.size) if treated_ids is None else treated_ids)]
    cids = [str(i) for i in (range(ts.size, ts.size + cs.size)
                             if control_ids is None else control_ids)]
    if not (np.all(np.isfinite(ts)) and np.all(np.isfinite(cs))):
        raise DataError("propensity scores must be finite")
    need = k * ts.size
    if cs.size < need:
        raise MatchingError(
            f"{cs.size} candidate controls for {ts.size} treated at {k}:1; "
            f"short by {need - cs.size}"
        )
    # rank of each control id for tie breaks; numeric ids compare numerically
    try:
        keys = [float(c) for c in cids]
    except ValueError:
        keys = cids
    id_rank = np.empty(cs.size, np.int64)
    id_rank[sorted(range(cs.size), key=lambda j: keys[j])] = np.arange(cs.size)
    order = np.lexsort((id_rank, cs))
    t_order = np.lexsort((np.arange(ts.size), -ts))
    picks = _greedy(ts, t_order, cs[order], id_rank[order], k,
                    np.inf if caliper is None else float(caliper))
    pairs, unmatched = {}, []
    for t in range(ts.size):
        if picks[t, 0] < 0:
            unmatched.append(tids[t])
        else:
            pairs[tids[t]] = [cids[order[j]] for j in picks[t]]
    scores = {u: float(s) for u, s in zip(tids, ts)}
    scores.update({u: float(s) for u, s in zip(cids, cs)})
    return MatchResult(pairs, scores, unmatched)
