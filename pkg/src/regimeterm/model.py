"""Full model container: physical dynamics, risk prices, noise, and pricing spec.

Filtering and simulation run under the physical measure; valuation runs
under the risk-neutral measure obtained through the per-factor, per-regime
risk-price mapping.  FullModel holds the physical primitives and derives the
pricing ModelSpec on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .affine import GcirParams, RiskPrice, to_risk_neutral
from .pricing import ModelSpec
from .ratings import RatingModel
from .regimes import CtmcGenerator

RATE_CURVES = ("CGB", "CDB")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class FactorDynamics:
    """Physical-measure parameters and risk prices of one factor, per regime."""

    params: Mapping[str, GcirParams]
    risk_price: Mapping[str, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "risk_price", dict(self.risk_price))
        if set(self.params) != set(self.risk_price):
            raise ModelError("risk prices must cover exactly the regime labels of the factor")
        for p in self.params.values():
            if p.measure != "P":
                raise ModelError("factor dynamics are specified under the physical measure")

    def q_params(self, label: str) -> GcirParams:
        return to_risk_neutral(self.params[label], RiskPrice(self.risk_price[label]))


@dataclass(frozen=True)
class FullModel:
    """Complete regime-switching term-structure model.

    Three rate-block factors follow the rate regime chain, the credit factor
    follows the credit chain, and the pass-through matrix maps the rate
    level into the default-intensity driver per joint regime.  Measurement
    noise is regime-conditional and shared across maturities within a curve
    (scalars broadcast; per-maturity vectors are accepted).
    """

    rate_factors: tuple[FactorDynamics, FactorDynamics, FactorDynamics]
    credit_factor: FactorDynamics
    rate_chain: CtmcGenerator
    credit_chain: CtmcGenerator
    passthrough: np.ndarray
    rating: RatingModel | None = None
    grid_delta: float = 1.0 / 52.0
    maturities: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0)
    rate_noise_sd: Mapping[str, Mapping[str, float | np.ndarray]] = field(default_factory=dict)
    credit_noise_sd: Mapping[str, float | np.ndarray] = field(default_factory=dict)
    observed_ratings: tuple[str, ...] = ("AAA", "AA+", "AA", "AA-")
    corr: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "rate_factors", tuple(self.rate_factors))
        pt = np.array(self.passthrough, dtype=float)
        pt.setflags(write=False)
        object.__setattr__(self, "passthrough", pt)
        object.__setattr__(self, "rate_noise_sd", {k: dict(v) for k, v in self.rate_noise_sd.items()})
        object.__setattr__(self, "credit_noise_sd", dict(self.credit_noise_sd))
        if len(self.rate_factors) != 3:
            raise ModelError("expected three rate-block factors")
        for fd in self.rate_factors:
            if set(fd.params) != set(self.rate_chain.labels):
                raise ModelError("rate factor labels must match the rate chain")
        if set(self.credit_factor.params) != set(self.credit_chain.labels):
            raise ModelError("credit factor labels must match the credit chain")
        if pt.shape != (self.credit_chain.n, self.rate_chain.n):
            raise ModelError("pass-through must be credit-regimes x rate-regimes")
        if self.corr is not None:
            corr = np.array(self.corr, dtype=float)
            corr.setflags(write=False)
            object.__setattr__(self, "corr", corr)
            if corr.shape != (4, 4) or np.any(np.abs(corr - corr.T) > 1e-12):
                raise ModelError("innovation correlation must be symmetric 4x4")

    def pricing_spec(self) -> ModelSpec:
        return ModelSpec(
            rate_factors=tuple(
                {lbl: fd.q_params(lbl) for lbl in self.rate_chain.labels}
                for fd in self.rate_factors
            ),
            credit_factor={lbl: self.credit_factor.q_params(lbl) for lbl in self.credit_chain.labels},
            rate_chain=self.rate_chain,
            credit_chain=self.credit_chain,
            passthrough=self.passthrough,
            rating=self.rating,
            grid_delta=self.grid_delta,
        )

    def maturity_steps(self) -> np.ndarray:
        steps = np.array([round(m / self.grid_delta) for m in self.maturities], dtype=int)
        if np.any(np.abs(steps * self.grid_delta - np.asarray(self.maturities)) > 1e-9):
            raise ModelError("maturities must be integer multiples of the grid spacing")
        return steps

    def reference_state(self) -> np.ndarray:
        """Long-run factor levels (regime-averaged), used as expansion point."""
        ref = np.zeros(4)
        for f, fd in enumerate(self.rate_factors):
            ref[f] = np.mean([p.theta for p in fd.params.values()])
        ref[3] = np.mean([p.theta for p in self.credit_factor.params.values()])
        return ref

    def rate_noise_vector(self, regime: str) -> np.ndarray:
        """Stacked measurement-noise sds for [CGB maturities..., CDB maturities...]."""
        n_m = len(self.maturities)
        out = []
        per_curve = self.rate_noise_sd.get(regime)
        if per_curve is None:
            raise ModelError(f"no rate measurement noise configured for regime {regime!r}")
        for curve in RATE_CURVES:
            sd = np.asarray(per_curve[curve], dtype=float)
            out.append(np.broadcast_to(sd, (n_m,)).copy())
        return np.concatenate(out)

    def credit_noise_vector(self, regime: str) -> np.ndarray:
        """Stacked sds for [rating1 maturities..., rating2 maturities..., ...]."""
        n_m = len(self.maturities)
        sd = np.asarray(self.credit_noise_sd[regime], dtype=float)
        per_rating = np.broadcast_to(sd, (n_m,)).copy()
        return np.tile(per_rating, len(self.observed_ratings))

    def with_rating(self, rating: RatingModel) -> "FullModel":
        return replace(self, rating=rating)
