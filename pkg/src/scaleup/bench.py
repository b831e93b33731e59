"""Replication harness: simulate, estimate, and summarize against the truth."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ConfigError, EstimateResult
from .dgp import DgpConfig, Replication, make_replication, replication_rng
from .estimators import EstimatorSpec, estimate, subgroup_mask

log = logging.getLogger(__name__)

MAX_FAIL = 0.10
MC_SE_TARGET = 0.2


@dataclass(frozen=True)
class MetricsRow:
    estimator: str
    estimand: str
    bias: float
    se: float
    rmse: float
    ci_width: float
    coverage: float
    bias_adjusted_coverage: float
    mean_estimate: float
    mean_estimated_se: float
    prob_savings: Optional[float]
    mc_se_of_bias: float
    n_reps: int
    n_effective: int = 0
    valid: bool = True
    mc_se_ok: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


FIELDS = [f.name for f in fields(MetricsRow)]


def _covers(lo, hi, truth) -> np.ndarray:
    tol = 1e-9 * np.maximum(1.0, np.abs(truth))
    return (lo - tol <= truth) & (truth <= hi + tol)


def compute_metrics(estimates, intervals, estimated_ses, truths, estimator: str = "",
                    estimand: str = "", prob_savings=None, n_reps: Optional[int] = None
                    ) -> MetricsRow:
    """Summary row for one estimator and estimand.

    ``se`` is the spread (population SD) of the errors ``est - truth``, so
    ``rmse**2 == bias**2 + se**2``.  Bias-adjusted coverage shifts every
    estimate and interval by the mean bias before checking coverage.
    """
    est = np.asarray(estimates, float)
    truth = np.asarray(truths, float)
    iv = np.asarray(intervals, float).reshape(-1, 2)
    if not (est.size == truth.size == iv.shape[0]):
        raise ConfigError("estimates, intervals and truths differ in length")
    n_eff = est.size
    n_reps = n_eff if n_reps is None else n_reps
    if n_eff == 0:
        nan = float("nan")
        return MetricsRow(estimator, estimand, nan, nan, nan, nan, nan, nan, nan, nan, None,
                          nan, n_reps, 0, False, False)
    err = est - truth
    bias = float(np.mean(err))
    se = float(np.std(err))
    rmse = float(np.sqrt(np.mean(err**2)))
    lo, hi = iv[:, 0], iv[:, 1]
    coverage = float(np.mean(_covers(lo, hi, truth)))
    adj = float(np.mean(_covers(lo - bias, hi - bias, truth)))
    ses = np.asarray(estimated_ses, float)
    ps = None
    if prob_savings is not None:
        vals = np.array([np.nan if p is None else p for p in prob_savings], float)
        if np.any(np.isfinite(vals)):
            ps = float(np.nanmean(vals))
    mc = se / math.sqrt(n_eff)
    valid = (n_reps - n_eff) <= MAX_FAIL * n_reps
    return MetricsRow(estimator, estimand, bias, se, rmse, float(np.mean(hi - lo)), coverage,
                      adj, float(np.mean(est)), float(np.mean(ses)), ps, mc, n_reps, n_eff,
                      bool(valid), bool(mc <= MC_SE_TARGET))


@dataclass(frozen=True)
class CustomEstimator:
    """Benchmark entry computed by an arbitrary function of the replication."""

    name: str
    estimand: str
    fn: Callable[[Replication], EstimateResult]


def truth_for(estimand: str, rep: Replication, subgroup=None) -> float:
    if estimand == "SATT":
        return rep.truth.true_satt
    if estimand == "TATT":
        return rep.truth.true_tatt
    ds = rep.dataset
    sel = (ds.v == 1) & subgroup_mask(ds, subgroup)
    return float(np.mean(rep.tau[sel])) if sel.any() else float("nan")


def _rep_seed(seed: int, rep: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, rep, k]).generate_state(1)[0])


def _run_replication(config: DgpConfig, specs, seed: int, rep: int) -> list:
    replication = make_replication(config, replication_rng(seed, rep))
    rows = []
    for k, spec in enumerate(specs):
        name, estimand = spec.name, spec.estimand
        truth = truth_for(estimand, replication, getattr(spec, "subgroup", None))
        row = {"rep": rep, "estimator": name, "estimand": estimand, "truth": truth,
               "estimate": float("nan"), "lo": float("nan"), "hi": float("nan"),
               "estimated_se": float("nan"), "prob_savings": None, "error": ""}
        try:
            if isinstance(spec, CustomEstimator):
                res = spec.fn(replication)
            else:
                res = estimate(spec, replication.dataset, seed=_rep_seed(seed, rep, k))
            row.update(estimate=res.point, lo=res.lo, hi=res.hi, estimated_se=res.se,
                       prob_savings=res.prob_savings)
        except Exception as exc:  # skip-and-flag policy
            log.warning("replication %d: %s %s failed: %s", rep, name, estimand, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


@dataclass
class BenchmarkResult:
    table: list
    raw: list = field(default_factory=list)

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FIELDS)
        for row in self.table:
            w.writerow([_fmt(getattr(row, f)) for f in FIELDS])
        return buf.getvalue()

    def raw_csv(self) -> str:
        cols = ["rep", "estimator", "estimand", "truth", "estimate", "lo", "hi",
                "estimated_se", "prob_savings", "error"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.raw:
            w.writerow([_fmt(r[c]) for c in cols])
        return buf.getvalue()

    def row(self, estimator: str, estimand: str) -> MetricsRow:
        for r in self.table:
            if r.estimator == estimator and r.estimand == estimand:
                return r
        raise KeyError((estimator, estimand))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_benchmark(config: DgpConfig, specs: Sequence, reps: int, seed: int,
                  jobs: int = 1) -> BenchmarkResult:
    """Simulate ``reps`` replications and run every spec on each.

    Replication ``r`` uses RNG streams derived from ``(seed, r)`` only, so
    the table does not depend on ``jobs``.
    """
    if reps < 2:
        raise ConfigError("a benchmark needs at least 2 replications")
    specs = list(specs)
    if jobs == 1:
        per_rep = [_run_replication(config, specs, seed, r) for r in range(reps)]
    else:
        from joblib import Parallel, delayed

        per_rep = Parallel(n_jobs=jobs)(
            delayed(_run_replication)(config, specs, seed, r) for r in range(reps))
    raw = [row for rows in per_rep for row in rows]
    table = []
    for k, spec in enumerate(specs):
        rows = [rows[k] for rows in per_rep]
        ok = [r for r in rows if not r["error"] and np.isfinite(r["truth"])]
        table.append(compute_metrics(
            [r["estimate"] for r in ok], [(r["lo"], r["hi"]) for r in ok],
            [r["estimated_se"] for r in ok], [r["truth"] for r in ok],
            spec.name, spec.estimand, [r["prob_savings"] for r in ok], n_reps=reps))
    return BenchmarkResult(table, raw)


def read_raw_csv(text: str) -> list:
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        row = dict(r)
        for key in ("truth", "estimate", "lo", "hi", "estimated_se"):
            row[key] = float(row[key])
        row["rep"] = int(row["rep"])
        row["prob_savings"] = float(row["prob_savings"]) if row["prob_savings"] else None
        out.append(row)
    return out


def bias_gap(raw: list, first: str, second: str, estimand: str) -> tuple:
    """Paired comparison ``|bias(second)| - |bias(first)|`` over replications
    where both succeeded.  Returns (gap, Monte-Carlo SE)."""
    by = {}
    for r in raw:
        if r["estimand"] == estimand and not r["error"]:
            by.setdefault(r["rep"], {})[r["estimator"]] = r["estimate"] - r["truth"]
    pairs = np.array([(d[first], d[second]) for d in by.values() if first in d and second in d])
    if pairs.shape[0] < 2:
        return float("nan"), float("nan")
    e1, e2 = pairs[:, 0], pairs[:, 1]
    s1 = np.sign(e1.mean()) or 1.0
    s2 = np.sign(e2.mean()) or 1.0
    diff = s2 * e2 - s1 * e1
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(diff.size))


def plot_data(raw: list) -> str:
    """Tidy CSV (rep, estimator, estimand, metric, value) for plotting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rep", "estimator", "estimand", "metric", "value"])
    for r in raw:
        if r["error"]:
            continue
        err = r["estimate"] - r["truth"]
        vals = {"error": err, "squared_error": err * err, "width": r["hi"] - r["lo"],
                "covered": float(r["lo"] <= r["truth"] <= r["hi"])}
        for k, v in vals.items():
            w.writerow([r["rep"], r["estimator"], r["estimand"], k, repr(float(v))])
    return buf.getvalue()
