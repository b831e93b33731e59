"""Sum-of-trees samplers: BART for outcomes and propensities, BCF for effects."""
from .model import (
    BartFit,
    BcfFit,
    Binner,
    ForestDraws,
    fit_bart,
    fit_bart_volunteering,
    fit_bcf,
    predict_tau,
)

__all__ = ["BartFit", "BcfFit", "Binner", "ForestDraws", "fit_bart",
           "fit_bart_volunteering", "fit_bcf", "predict_tau"]
