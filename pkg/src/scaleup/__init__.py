"""Target-population average treatment effects for scaled-up voluntary interventions."""
from .core import (
    Covariate,
    CovariateSchema,
    Dataset,
    EstimateResult,
    PosteriorDraws,
    UnitRecord,
    aggregate_tatt,
    aggregate_tcatt,
    weighted_quantiles,
)

__version__ = "0.1.0"

__all__ = [
    "Covariate",
    "CovariateSchema",
    "Dataset",
    "EstimateResult",
    "PosteriorDraws",
    "UnitRecord",
    "aggregate_tatt",
    "aggregate_tcatt",
    "weighted_quantiles",
]
