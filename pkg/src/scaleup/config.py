"""MCMC and estimator settings."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

from .core import ConfigError


@dataclass(frozen=True)
class McmcConfig:
    """Chain layout and tree-prior settings for the forest samplers.

    Kept draws per fit are ``chains * kept``; each chain runs ``burn_in``
    discarded sweeps, then keeps every ``thin``-th of ``kept * thin`` sweeps.
    """

    n_trees_mu: int = 200
    n_trees_tau: int = 50
    chains: int = 3
    burn_in: int = 100
    thin: int = 30
    kept: int = 300
    seed: Optional[int] = None
    alpha: float = 0.95
    beta: float = 2.0
    alpha_tau: float = 0.25
    beta_tau: float = 3.0
    k: float = 2.0
    nu: float = 3.0
    q: float = 0.90
    max_depth: int = 10
    grid: int = 100
    jobs: int = 1
    debug: bool = False

    def __post_init__(self):
        for name in ("n_trees_mu", "n_trees_tau", "chains", "thin", "kept", "max_depth",
                     "grid", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"mcmc {name} must be >= 1")
        if self.burn_in < 0:
            raise ConfigError("mcmc burn_in must be >= 0")
        if not (0 < self.alpha < 1 and 0 < self.alpha_tau < 1):
            raise ConfigError("split probabilities alpha must lie in (0, 1)")
        if self.max_depth > 14:
            raise ConfigError("max_depth above 14 is not supported")

    @property
    def draws(self) -> int:
        return self.chains * self.kept

    def with_(self, **kw) -> "McmcConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, base: Optional["McmcConfig"] = None) -> "McmcConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown mcmc keys: {sorted(bad)}")
        return replace(base or cls(), **d)


# defaults for each use of the samplers
BART_OUTCOME = McmcConfig(burn_in=100, thin=30)
BART_PROPENSITY = McmcConfig(burn_in=100, thin=3)
BCF_DEFAULT = McmcConfig(burn_in=3000, thin=30)


@dataclass(frozen=True)
class BhmConfig:
    chains: int = 3
    burn_in: int = 450
    kept: int = 300
    thin: int = 1
    seed: Optional[int] = None

    @property
    def draws(self) -> int:
        return self.chains * self.kept

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, base: Optional["BhmConfig"] = None) -> "BhmConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown bhm keys: {sorted(bad)}")
        return replace(base or cls(), **d)
