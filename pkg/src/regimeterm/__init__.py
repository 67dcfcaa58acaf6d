"""Regime-switching square-root-diffusion term-structure toolkit."""

__version__ = "0.1.0"

from .affine import (
    AffineCoeffs,
    GcirParams,
    RiskPrice,
    affine_coefficients,
    implied_lambda,
    riccati_oracle,
    to_risk_neutral,
    transform_value,
)
from .model import FactorDynamics, FullModel
from .pricing import ModelSpec, RegimePriceVector
from .ratings import (
    LandoDecomposition,
    MigrationCounts,
    RatingGenerator,
    RatingModel,
    RatingTransition,
)
from .regimes import CtmcGenerator, TransitionMatrix, kronecker_sum, stationary_distribution, transition_matrix

__all__ = [
    "AffineCoeffs",
    "CtmcGenerator",
    "FactorDynamics",
    "FullModel",
    "GcirParams",
    "LandoDecomposition",
    "MigrationCounts",
    "ModelSpec",
    "RatingGenerator",
    "RatingModel",
    "RatingTransition",
    "RegimePriceVector",
    "RiskPrice",
    "TransitionMatrix",
    "affine_coefficients",
    "implied_lambda",
    "kronecker_sum",
    "riccati_oracle",
    "stationary_distribution",
    "to_risk_neutral",
    "transform_value",
    "transition_matrix",
]
