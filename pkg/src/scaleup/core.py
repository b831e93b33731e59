"""Domain types, covariate schema and the weighted aggregation formulas.

Every estimator in the package produces an ``M x n`` matrix of effect draws
``tau`` and a matching matrix of volunteering weights ``w``.  The target
population effect among the treated is the ``w``-weighted mean of ``tau``,
computed draw by draw so that uncertainty in both matrices carries through.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

ESTIMANDS = ("TATT", "SATT", "TCATT")
UNKNOWN = -1


class ScaleupError(Exception):
    """Base class; ``prefix`` tags the message for the command line."""

    prefix = "error"


class DataError(ScaleupError):
    prefix = "data error"


class SchemaError(DataError):
    prefix = "schema error"


class NonFiniteError(DataError):
    prefix = "non-finite input"


class ModelError(ScaleupError):
    prefix = "model error"


class DegenerateWeightsError(ModelError):
    prefix = "degenerate weights"


class EmptySubgroupError(DataError):
    prefix = "empty subgroup"


class PositivityError(ModelError):
    prefix = "positivity violation"


class ConfigError(ScaleupError):
    prefix = "config error"


def _frozen(arr, dtype=None):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


# --------------------------------------------------------------------------
# covariate schema


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str  # "continuous" | "binary" | "categorical"
    levels: tuple = ()
    mu: bool = True
    tau: bool = True

    def __post_init__(self):
        if self.kind not in ("continuous", "binary", "categorical"):
            raise SchemaError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            levels = tuple(str(lv) for lv in self.levels)
            if len(levels) < 2 or len(set(levels)) != len(levels):
                raise SchemaError(
                    f"covariate {self.name!r}: categorical needs >=2 distinct levels"
                )
            if len(levels) > 62:
                raise SchemaError(f"covariate {self.name!r}: more than 62 levels")
            object.__setattr__(self, "levels", levels)

    @property
    def n_levels(self) -> int:
        return {"continuous": 0, "binary": 2}.get(self.kind, len(self.levels))


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered covariate description.

    Covariate values are stored numerically: continuous as given, binary as
    0/1, categorical as the integer index into ``levels``.
    """

    covariates: tuple

    def __post_init__(self):
        covs = tuple(self.covariates)
        names = [c.name for c in covs]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate covariate names")
        object.__setattr__(self, "covariates", covs)

    def __len__(self):
        return len(self.covariates)

    @property
    def names(self) -> list:
        return [c.name for c in self.covariates]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown covariate {name!r}") from None

    def select(self, role: str) -> "CovariateSchema":
        """Sub-schema of covariates eligible for the ``mu`` or ``tau`` role."""
        return CovariateSchema(tuple(c for c in self.covariates if getattr(c, role)))

    def role_columns(self, role: str) -> np.ndarray:
        return np.array([j for j, c in enumerate(self.covariates) if getattr(c, role)], int)

    def encode_column(self, j: int, raw: Sequence) -> np.ndarray:
        """Map raw text/number values of column ``j`` to stored numbers."""
        cov = self.covariates[j]
        raw = list(raw)
        if any(v is None or (isinstance(v, str) and v.strip() == "") for v in raw):
            raise DataError(f"missing value in covariate {cov.name!r}")
        if cov.kind == "categorical":
            lookup = {lv: i for i, lv in enumerate(cov.levels)}
            out = np.empty(len(raw))
            for i, v in enumerate(raw):
                key = str(v).strip()
                if key not in lookup:
                    # tolerate numeric labels written as floats, e.g. "1.0"
                    try:
                        key = str(int(float(key)))
                    except ValueError:
                        pass
                if key not in lookup:
                    raise DataError(f"covariate {cov.name!r}: unseen level {v!r}")
                out[i] = lookup[key]
            return out
        try:
            out = np.array([float(v) for v in raw])
        except ValueError as exc:
            raise DataError(f"covariate {cov.name!r}: {exc}") from None
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"covariate {cov.name!r} has non-finite values")
        if cov.kind == "binary" and not np.all((out == 0) | (out == 1)):
            raise DataError(f"covariate {cov.name!r}: binary values must be 0/1")
        return out

    def decode_column(self, j: int, values: np.ndarray) -> list:
        cov = self.covariates[j]
        if cov.kind == "categorical":
            return [cov.levels[int(v)] for v in values]
        if cov.kind == "binary":
            return [str(int(v)) for v in values]
        return [repr(float(v)) for v in values]

    def validate(self, x: np.ndarray) -> None:
        if x.ndim != 2 or x.shape[1] != len(self):
            raise SchemaError(
                f"covariate matrix has {x.shape[-1]} columns, schema has {len(self)}"
            )
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("covariate matrix has non-finite values")
        for j, cov in enumerate(self.covariates):
            col = x[:, j]
            if cov.kind == "binary" and not np.all((col == 0) | (col == 1)):
                raise SchemaError(f"covariate {cov.name!r}: binary values must be 0/1")
            if cov.kind == "categorical":
                ok = (col == np.round(col)) & (col >= 0) & (col < cov.n_levels)
                if not np.all(ok):
                    raise SchemaError(f"covariate {cov.name!r}: level code out of range")

    def design(self, x: np.ndarray, coding: str = "reference"):
        """Expand categoricals to indicator columns.

        Parameters
        ----------
        x : (n, d) array of stored covariate values
        coding : "reference" drops the first level of each categorical;
            "full" keeps one indicator per level for binary and categorical
            covariates (used with sum-to-zero constraints).

        Returns
        -------
        matrix : (n, k) float array
        names : list of column names
        blocks : list of (start, stop) index pairs, one per covariate
        """
        cols, names, blocks = [], [], []
        for j, cov in enumerate(self.covariates):
            start = len(cols)
            col = x[:, j]
            if cov.kind == "continuous" or (cov.kind == "binary" and coding == "reference"):
                cols.append(col.astype(float))
                names.append(cov.name)
            else:
                levels = cov.levels if cov.kind == "categorical" else ("0", "1")
                first = 1 if coding == "reference" else 0
                for k in range(first, len(levels)):
                    cols.append((col == k).astype(float))
                    names.append(f"{cov.name}[{levels[k]}]")
            blocks.append((start, len(cols)))
        matrix = np.column_stack(cols) if cols else np.empty((x.shape[0], 0))
        return matrix, names, blocks

    def to_dict(self) -> dict:
        out = []
        for c in self.covariates:
            item = {"name": c.name, "kind": c.kind, "mu": c.mu, "tau": c.tau}
            if c.kind == "categorical":
                item["levels"] = list(c.levels)
            out.append(item)
        return {"covariates": out}

    @classmethod
    def from_dict(cls, spec: dict) -> "CovariateSchema":
        items = spec.get("covariates")
        if not isinstance(items, list) or not items:
            raise SchemaError("schema needs a non-empty [[covariates]] list")
        covs = []
        for item in items:
            if "name" not in item or "kind" not in item:
                raise SchemaError("each covariate needs 'name' and 'kind'")
            covs.append(
                Covariate(
                    name=str(item["name"]),
                    kind=str(item["kind"]),
                    levels=tuple(item.get("levels", ())),
                    mu=bool(item.get("mu", True)),
                    tau=bool(item.get("tau", True)),
                )
            )
        return cls(tuple(covs))


# --------------------------------------------------------------------------
# units and datasets


@dataclass(frozen=True)
class UnitRecord:
    """One practice: outcome change score, indicators, size and covariates."""

    id: str
    y: float
    a: int
    s: int
    r: int
    v: Optional[int]
    n_bene: float
    x: tuple

    def __post_init__(self):
        _check_unit(self.id, self.y, self.a, self.s, self.r,
                    UNKNOWN if self.v is None else self.v, self.n_bene)


def _check_unit(uid, y, a, s, r, v, n_bene):
    if not np.isfinite(y):
        raise NonFiniteError(f"unit {uid}: outcome is not finite")
    for name, val in (("a", a), ("s", s), ("r", r)):
        if val not in (0, 1):
            raise DataError(f"unit {uid}: {name} must be 0 or 1")
    if v not in (0, 1, UNKNOWN):
        raise DataError(f"unit {uid}: v must be 0, 1 or unknown")
    if a == 1 and s != 1:
        raise DataError(f"unit {uid}: treated unit outside the study sample")
    if s == 1 and a == 1 and not (r == 1 and v == 1):
        raise DataError(f"unit {uid}: study treated unit must be a study-region volunteer")
    if v == UNKNOWN and r == 1:
        raise DataError(f"unit {uid}: volunteering status unknown inside the study region")
    if not (n_bene >= 1):
        raise DataError(f"unit {uid}: n_bene must be >= 1")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented, read-only collection of units plus their schema.

    ``v`` uses -1 for unknown volunteering status.
    """

    ids: np.ndarray
    y: np.ndarray
    a: np.ndarray
    s: np.ndarray
    r: np.ndarray
    v: np.ndarray
    n_bene: np.ndarray
    x: np.ndarray
    schema: CovariateSchema

    def __post_init__(self):
        n = len(self.ids)
        set_ = object.__setattr__
        set_(self, "ids", _frozen(np.asarray(self.ids).astype(str)))
        set_(self, "y", _frozen(self.y, float))
        for name in ("a", "s", "r", "v"):
            set_(self, name, _frozen(getattr(self, name), np.int8))
        set_(self, "n_bene", _frozen(self.n_bene, float))
        set_(self, "x", _frozen(np.asarray(self.x, float).reshape(n, -1)))
        for name in ("y", "a", "s", "r", "v", "n_bene"):
            if getattr(self, name).shape != (n,):
                raise DataError(f"column {name!r} has wrong length")
        if len(set(self.ids.tolist())) != n:
            raise DataError("unit ids are not unique")
        self.schema.validate(self.x)
        self._validate()

    def _validate(self):
        y, a, s, r, v, nb = self.y, self.a, self.s, self.r, self.v, self.n_bene
        bad = ~np.isfinite(y)
        if bad.any():
            raise NonFiniteError(f"unit {self.ids[bad][0]}: outcome is not finite")
        for name, col in (("a", a), ("s", s), ("r", r)):
            bad = (col != 0) & (col != 1)
            if bad.any():
                raise DataError(f"unit {self.ids[bad][0]}: {name} must be 0 or 1")
        checks = [
            ((v != 0) & (v != 1) & (v != UNKNOWN), "v must be 0, 1 or unknown"),
            ((a == 1) & (s != 1), "treated unit outside the study sample"),
            ((s == 1) & (a == 1) & ~((r == 1) & (v == 1)),
             "study treated unit must be a study-region volunteer"),
            ((v == UNKNOWN) & (r == 1), "volunteering status unknown inside the study region"),
            (~(nb >= 1), "n_bene must be >= 1"),
        ]
        for bad, msg in checks:
            if bad.any():
                raise DataError(f"unit {self.ids[bad][0]}: {msg}")

    # -- construction -----------------------------------------------------
    @classmethod
    def from_records(cls, records: Iterable[UnitRecord], schema: CovariateSchema) -> "Dataset":
        recs = list(records)
        return cls(
            ids=[r.id for r in recs],
            y=[r.y for r in recs],
            a=[r.a for r in recs],
            s=[r.s for r in recs],
            r=[r.r for r in recs],
            v=[UNKNOWN if r.v is None else r.v for r in recs],
            n_bene=[r.n_bene for r in recs],
            x=np.array([r.x for r in recs], float).reshape(len(recs), len(schema)),
            schema=schema,
        )

    def records(self) -> list:
        out = []
        for i in range(self.n):
            v = int(self.v[i])
            out.append(UnitRecord(str(self.ids[i]), float(self.y[i]), int(self.a[i]),
                                  int(self.s[i]), int(self.r[i]), None if v == UNKNOWN else v,
                                  float(self.n_bene[i]), tuple(self.x[i].tolist())))
        return out

    # -- views --------------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def study(self) -> np.ndarray:
        return self.s == 1

    @property
    def study_treated(self) -> np.ndarray:
        return (self.s == 1) & (self.a == 1)

    @property
    def study_control(self) -> np.ndarray:
        return (self.s == 1) & (self.a == 0)

    @property
    def study_region(self) -> np.ndarray:
        return self.r == 1

    def subset(self, mask) -> "Dataset":
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return Dataset(self.ids[idx], self.y[idx], self.a[idx], self.s[idx], self.r[idx],
                       self.v[idx], self.n_bene[idx], self.x[idx], self.schema)

    def take(self, idx: np.ndarray, relabel: bool = True) -> "Dataset":
        """Rows ``idx`` (repeats allowed); ids are made unique when relabelling."""
        idx = np.asarray(idx)
        ids = self.ids[idx]
        if relabel:
            ids = np.array([f"{u}#{k}" for k, u in enumerate(ids)])
        return Dataset(ids, self.y[idx], self.a[idx], self.s[idx], self.r[idx],
                       self.v[idx], self.n_bene[idx], self.x[idx], self.schema)

    def design(self, coding: str = "reference", rows=None):
        x = self.x if rows is None else self.x[rows]
        return self.schema.design(x, coding)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.y, self.a, self.s, self.r, self.v, self.n_bene, self.x):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update("\x00".join(self.ids.tolist()).encode())
        return h.hexdigest()


# --------------------------------------------------------------------------
# posterior draws and results


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Paired effect and weight draws; row ``m`` of both belongs to draw ``m``."""

    tau: np.ndarray
    w: np.ndarray
    unit_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        tau = np.atleast_2d(np.asarray(self.tau, float))
        w = np.atleast_2d(np.asarray(self.w, float))
        if tau.shape != w.shape:
            raise ModelError(
                f"tau draws {tau.shape} and weight draws {w.shape} differ in shape"
            )
        if tau.size == 0:
            raise ModelError("posterior draws are empty")
        if not (np.all(np.isfinite(tau)) and np.all(np.isfinite(w))):
            raise NonFiniteError("posterior draws contain non-finite values")
        if np.any(w < 0):
            raise ModelError("weight draws must be nonnegative")
        object.__setattr__(self, "tau", _frozen(tau))
        object.__setattr__(self, "w", _frozen(w))
        if self.unit_ids is not None:
            ids = np.asarray(self.unit_ids).astype(str)
            if ids.shape != (tau.shape[1],):
                raise ModelError("unit_ids length does not match draw columns")
            object.__setattr__(self, "unit_ids", _frozen(ids))

    @property
    def M(self) -> int:
        return self.tau.shape[0]

    @property
    def n(self) -> int:
        return self.tau.shape[1]


@dataclass(frozen=True, eq=False)
class EstimateResult:
    estimand: str
    point: float
    lo: float
    hi: float
    level: float = 0.90
    draws: np.ndarray = field(default_factory=lambda: np.empty(0))
    prob_savings: Optional[float] = None
    estimator: str = ""
    n_failed: int = 0

    def __post_init__(self):
        if self.estimand not in ESTIMANDS:
            raise ConfigError(f"unknown estimand {self.estimand!r}")
        object.__setattr__(self, "draws", _frozen(np.asarray(self.draws, float).ravel()))

    @property
    def interval(self) -> tuple:
        return (self.lo, self.hi)

    @property
    def se(self) -> float:
        """Spread of the draw vector (posterior SD or bootstrap SE)."""
        if self.draws.size < 2:
            return 0.0
        return float(np.std(self.draws, ddof=1))

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "estimand": self.estimand,
            "point": self.point,
            "lo": self.lo,
            "hi": self.hi,
            "level": self.level,
            "prob_savings": self.prob_savings,
            "n_draws": int(self.draws.size),
        }


def weighted_quantiles(values, probs) -> np.ndarray:
    """Type-7 (linear interpolation) empirical quantiles.

    >>> weighted_quantiles([1, 2, 3, 4], [0.05])
    array([1.15])
    """
    values = np.asarray(values, float).ravel()
    probs = np.atleast_1d(np.asarray(probs, float))
    if values.size == 0:
        raise DataError("quantiles of an empty vector")
    if np.any((probs < 0) | (probs > 1)) or not np.all(np.isfinite(probs)):
        raise DataError("quantile probabilities must lie in [0, 1]")
    return np.quantile(values, probs, method="linear")


def summarize_draws(per_draw, estimand: str, level: float = 0.90, point=None,
                    posterior: bool = True, estimator: str = "", n_failed: int = 0):
    """Point, central interval and savings probability from aggregate draws.

    ``point`` defaults to the mean of the draws (posterior estimators);
    bootstrap estimators pass the full-sample estimate instead.
    """
    per_draw = np.asarray(per_draw, float).ravel()
    alpha = 1.0 - level
    lo, hi = weighted_quantiles(per_draw, [alpha / 2, 1 - alpha / 2])
    if point is None:
        point = float(np.mean(per_draw))
    prob = float(np.mean(per_draw < 0)) if posterior else None
    return EstimateResult(estimand, float(point), float(lo), float(hi), level,
                          per_draw, prob, estimator, n_failed)


def per_draw_aggregates(tau: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row-wise ``sum(w * tau) / sum(w)``."""
    tot = w.sum(axis=1)
    zero = np.flatnonzero(tot <= 0)
    if zero.size:
        raise DegenerateWeightsError(f"draw {int(zero[0])} has zero total weight")
    return (w * tau).sum(axis=1) / tot


def aggregate_tatt(draws: PosteriorDraws, level: float = 0.90,
                   estimand: str = "TATT") -> EstimateResult:
    """Target average effect among the treated, draw by draw."""
    agg = per_draw_aggregates(draws.tau, draws.w)
    return summarize_draws(agg, estimand, level)


def _subset_mask(draws: PosteriorDraws, subset) -> np.ndarray:
    n = draws.n
    if callable(subset):
        if draws.unit_ids is None:
            raise DataError("a callable subset needs unit ids on the draws")
        return np.array([bool(subset(u)) for u in draws.unit_ids])
    arr = np.asarray(subset)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise DataError("subset mask length does not match draw columns")
        return arr
    if draws.unit_ids is None:
        raise DataError("an id subset needs unit ids on the draws")
    wanted = set(np.asarray(list(subset)).astype(str).tolist())
    return np.isin(draws.unit_ids, list(wanted))


def aggregate_tcatt(draws: PosteriorDraws, subset, level: float = 0.90) -> EstimateResult:
    """TATT restricted to units selected by ``subset``.

    ``subset`` is a boolean mask over draw columns, an iterable of unit ids,
    or a callable taking a unit id.
    """
    mask = _subset_mask(draws, subset)
    if not mask.any():
        raise EmptySubgroupError("subgroup selects no units")
    agg = per_draw_aggregates(draws.tau[:, mask], draws.w[:, mask])
    return summarize_draws(agg, "TCATT", level)


UnitPredicate = Union[Callable[[str], bool], Iterable, np.ndarray]
