"""Bond valuation under regime switching.

Regime-conditional zero-coupon prices solve a backward recursion on the
weekly observation grid: over one step the regime is frozen, the factor
transform is exponential-affine in closed form, and regimes then mix through
the one-step transition matrix.  Because a probability mixture of
exponentials is not exponential, each regime's price function is carried as
a finite mixture of exponential-affine terms

    P(x) = sum_m  coef_m * exp(-loads_m . x),

grown by one regime-mixing layer per step and compressed in a
mass-preserving way (exact merging of identical slope vectors, then
quantized merging matched in value and gradient at the evaluation state).
Compression to a single term per regime reproduces the cheap
"frozen-coefficient" approximation used inside the filters; the full
mixture is the pricing-grade path.  Observable prices are convex mixtures
of regime-conditional prices at the price level.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .affine import GcirParams, affine_ab
from .ratings import RatingModel
from .regimes import CtmcGenerator, kronecker_sum, transition_matrix

logger = logging.getLogger(__name__)

CGB = "CGB"
CDB = "CDB"
N_FACTORS = 4
MU_FLOOR = 1e-8
DEFAULT_MAX_TERMS = 4096
_PRUNE_REL = 1e-14
_MERGE_RESOLUTION = 1e-9

_LOADINGS = {CGB: (1.0, 1.0, 0.0, 0.0), CDB: (1.0, 1.0, 1.0, 0.0)}


class PricingError(ValueError):
    pass


class DimensionMismatch(PricingError):
    pass


class NonPositivePrice(PricingError):
    pass


class ZeroWeightMass(PricingError):
    pass


def short_rate_loadings(curve: str) -> np.ndarray:
    """Factor loadings of the curve's short rate: CGB spans the two level
    factors, CDB adds the convenience-yield factor."""
    try:
        return np.array(_LOADINGS[curve])
    except KeyError:
        raise PricingError(f"unknown curve {curve!r}") from None


@dataclass(frozen=True)
class ModelSpec:
    """Risk-neutral pricing model: factor dynamics per regime, regime chains,
    pass-through coefficients, and rating inputs.

    rate_factors[k][label] holds the regime-conditional parameters of factor
    k (levels and convenience yield, driven by the rate chain);
    credit_factor[label] those of the credit factor (driven by the credit
    chain).  passthrough[ci, ri] is the loading of the rate level into the
    intensity driver when the credit regime is credit_chain.labels[ci] and
    the rate regime is rate_chain.labels[ri].
    """

    rate_factors: tuple[Mapping[str, GcirParams], ...]
    credit_factor: Mapping[str, GcirParams]
    rate_chain: CtmcGenerator
    credit_chain: CtmcGenerator
    passthrough: np.ndarray
    rating: RatingModel | None = None
    grid_delta: float = 1.0 / 52.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "rate_factors", tuple(dict(f) for f in self.rate_factors))
        object.__setattr__(self, "credit_factor", dict(self.credit_factor))
        pt = np.array(self.passthrough, dtype=float)
        pt.setflags(write=False)
        object.__setattr__(self, "passthrough", pt)
        if len(self.rate_factors) != 3:
            raise PricingError("expected three rate-block factors")
        for f in self.rate_factors:
            if set(f) != set(self.rate_chain.labels):
                raise PricingError("rate factor regime labels must match the rate chain")
            for p in f.values():
                if p.measure != "Q":
                    raise PricingError("pricing parameters must be risk-neutral")
        if set(self.credit_factor) != set(self.credit_chain.labels):
            raise PricingError("credit factor regime labels must match the credit chain")
        for p in self.credit_factor.values():
            if p.measure != "Q":
                raise PricingError("pricing parameters must be risk-neutral")
        if pt.shape != (self.credit_chain.n, self.rate_chain.n):
            raise PricingError("pass-through matrix must be credit-regimes x rate-regimes")
        if self.grid_delta <= 0.0:
            raise PricingError("grid spacing must be positive")

    @property
    def joint_chain(self) -> CtmcGenerator:
        return kronecker_sum(self.rate_chain, self.credit_chain)

    @property
    def joint_labels(self) -> tuple[tuple[str, str], ...]:
        return tuple((r, c) for r in self.rate_chain.labels for c in self.credit_chain.labels)

    def pass_through(self, rate_label: str, credit_label: str) -> float:
        return float(
            self.passthrough[
                self.credit_chain.index(credit_label), self.rate_chain.index(rate_label)
            ]
        )


@dataclass(frozen=True)
class RegimePriceVector:
    """Strictly positive regime-conditional prices at one maturity."""

    values: np.ndarray
    maturity: float
    labels: tuple = ()

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", tuple(self.labels))
        if np.any(v <= 0.0):
            raise NonPositivePrice("regime-conditional prices must be strictly positive")
        if self.maturity == 0.0 and np.any(v != 1.0):
            raise PricingError("prices at zero maturity must equal one")


@dataclass
class ExpAffineMixture:
    """Finite mixture sum_m coef_m * exp(-loads[m] . x) of positive terms."""

    coef: np.ndarray
    loads: np.ndarray

    def value(self, x: np.ndarray) -> float:
        return float(np.sum(self.coef * np.exp(-self.loads @ x)))

    @property
    def n_terms(self) -> int:
        return self.coef.shape[0]

    @staticmethod
    def unit(n_factors: int) -> "ExpAffineMixture":
        return ExpAffineMixture(coef=np.ones(1), loads=np.zeros((1, n_factors)))


def _merge_exact(coef: np.ndarray, loads: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum coefficients of byte-identical slope vectors (exact, no error)."""
    if coef.shape[0] <= 1:
        return coef, loads
    uniq, inverse = np.unique(loads, axis=0, return_inverse=True)
    if uniq.shape[0] == loads.shape[0]:
        return coef, loads
    merged = np.zeros(uniq.shape[0])
    np.add.at(merged, inverse, coef)
    return merged, uniq


_EXACT_MERGE_LIMIT = 64


def _quantized_groups(loads: np.ndarray, max_terms: int) -> np.ndarray:
    """Group index per term from a quantized-grid clustering of slope vectors.

    The cell size starts near the resolution that would yield max_terms
    occupied cells for a dense cloud and doubles until the occupied count
    fits the budget, so only a handful of passes run.
    """
    spread = loads.max(axis=0) - loads.min(axis=0)
    active = spread > 0.0
    if not np.any(active):
        return np.zeros(loads.shape[0], dtype=np.intp)
    d_active = int(np.count_nonzero(active))
    eps = max(float(spread.max()) / max_terms ** (1.0 / d_active), _MERGE_RESOLUTION)
    reduced = loads[:, active]
    while True:
        keys = np.floor(reduced / eps).astype(np.int64)
        _, inverse = np.unique(keys, axis=0, return_inverse=True)
        if inverse.max() + 1 <= max_terms:
            return inverse
        eps *= 2.0


def _compress(
    coef: np.ndarray,
    loads: np.ndarray,
    x_eval: np.ndarray,
    max_terms: int,
    stats: dict,
) -> tuple[np.ndarray, np.ndarray]:
    """Mass-preserving compression of a mixture at the evaluation state.

    Small mixtures merge byte-identical slope vectors exactly (this keeps
    regime-degenerate and frozen-chain recursions at a single term with no
    roundoff).  Above the term cap, slope vectors are clustered on a
    quantized grid and every cluster is replaced by one term matching the
    cluster's value and gradient at x_eval, so total mass is preserved and
    the local error is second order in the within-cell slope spread.
    """
    n = coef.shape[0]
    if max_terms == 1:
        if np.all(loads == loads[0]):
            return np.array([coef.sum()]), loads[:1]
        contrib = coef * np.exp(-loads @ x_eval)
        total = contrib.sum()
        bbar = (contrib @ loads) / total
        return np.array([total * np.exp(bbar @ x_eval)]), bbar[None, :]
    if n <= _EXACT_MERGE_LIMIT:
        coef, loads = _merge_exact(coef, loads)
        n = coef.shape[0]
    if n <= max_terms:
        return coef, loads

    contrib = coef * np.exp(-loads @ x_eval)
    groups = _quantized_groups(loads, max_terms)
    n_cells = int(groups.max()) + 1
    value_per_cell = np.zeros(n_cells)
    np.add.at(value_per_cell, groups, contrib)
    new_loads = np.zeros((n_cells, loads.shape[1]))
    np.add.at(new_loads, groups, contrib[:, None] * loads)
    occupied = value_per_cell > 0.0  # cells whose mass underflowed carry nothing
    value_per_cell = value_per_cell[occupied]
    new_loads = new_loads[occupied] / value_per_cell[:, None]
    new_coef = value_per_cell * np.exp(new_loads @ x_eval)
    stats["merges"] = stats.get("merges", 0) + int(n - n_cells)
    return new_coef, new_loads


def _one_step(
    params: Sequence[GcirParams],
    c1_vec: np.ndarray,
    loads: np.ndarray,
    delta: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One-step transform of continuation terms under a frozen regime.

    Propagating exp(-loads . X_{t+delta}) through the per-factor closed
    forms (batched into a single call) returns the intercept sum and the
    new slope matrix.
    """
    kappa = np.array([p.kappa for p in params])
    theta = np.array([p.theta for p in params])
    alpha = np.array([p.alpha for p in params])
    beta = np.array([p.beta for p in params])
    a_f, b_f = affine_ab(
        kappa[None, :], theta[None, :], alpha[None, :], beta[None, :],
        np.asarray(c1_vec)[None, :], loads, delta,
    )
    return a_f.sum(axis=1), b_f


def _run_recursion(
    factor_params: Sequence[Mapping[object, GcirParams]],
    c1_by_label: Mapping[object, np.ndarray],
    labels: Sequence,
    p_delta: np.ndarray,
    delta: float,
    n_steps: int,
    x_eval: np.ndarray,
    max_terms: int,
    record: Sequence[int] = (),
) -> tuple[dict, dict, dict]:
    """Backward recursion over the observation grid for one pricing kernel.

    Returns (mixtures at n_steps per label, recorded prices {n: array},
    compression stats).
    """
    n_factors = len(factor_params)
    n_labels = len(labels)
    record_set = set(record)
    recorded: dict[int, np.ndarray] = {}
    stats: dict = {}
    mixtures = [ExpAffineMixture.unit(n_factors) for _ in range(n_labels)]
    if 0 in record_set:
        recorded[0] = np.ones(n_labels)
    for step in range(1, n_steps + 1):
        new_mixtures = []
        for si, lbl in enumerate(labels):
            pieces_coef = []
            pieces_loads = []
            for sj in range(n_labels):
                w = p_delta[si, sj]
                if w == 0.0:
                    continue
                pieces_coef.append(w * mixtures[sj].coef)
                pieces_loads.append(mixtures[sj].loads)
            coef = np.concatenate(pieces_coef)
            loads = np.vstack(pieces_loads)
            coef, loads = _compress(coef, loads, x_eval, max_terms, stats)
            params = [factor_params[f][lbl] for f in range(n_factors)]
            a_tot, loads = _one_step(params, c1_by_label[lbl], loads, delta)
            coef = coef * np.exp(a_tot)
            new_mixtures.append(ExpAffineMixture(coef=coef, loads=loads))
        mixtures = new_mixtures
        if step in record_set:
            recorded[step] = np.array([mx.value(x_eval) for mx in mixtures])
    return {lbl: mx for lbl, mx in zip(labels, mixtures)}, recorded, stats


def _as_state(x, n: int = N_FACTORS) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[0] == n:
        return x
    if x.shape[0] < n:
        return np.concatenate([x, np.zeros(n - x.shape[0])])
    raise DimensionMismatch(f"state vector has {x.shape[0]} entries, expected at most {n}")


def _rate_factor_params(m: ModelSpec) -> list[dict]:
    out = []
    for f in range(3):
        out.append({lbl: m.rate_factors[f][lbl] for lbl in m.rate_chain.labels})
    # inert placeholder keeps the credit slot dimension-aligned
    any_credit = next(iter(m.credit_factor.values()))
    out.append({lbl: any_credit for lbl in m.rate_chain.labels})
    return out


@dataclass(frozen=True)
class AffineBlock:
    """One-step discount block: intercept and per-factor slope vector."""

    a: float
    b: np.ndarray
    delta: float


def one_step_discount_block(m: ModelSpec, curve: str, regime: str, delta: float | None = None) -> AffineBlock:
    """Closed-form one-step conditional discount factor for a frozen regime."""
    delta = m.grid_delta if delta is None else delta
    c1 = short_rate_loadings(curve)
    a = 0.0
    b = np.zeros(N_FACTORS)
    for f in range(3):
        if c1[f] == 0.0:
            continue
        af, bf = affine_ab(
            *(getattr(m.rate_factors[f][regime], k) for k in ("kappa", "theta", "alpha", "beta")),
            c1[f],
            0.0,
            delta,
        )
        a += float(af)
        b[f] = float(bf)
    return AffineBlock(a=a, b=b, delta=delta)


def discount_bond_prices(
    m: ModelSpec,
    curve: str,
    x,
    n: int,
    *,
    max_terms: int = DEFAULT_MAX_TERMS,
    x_ref=None,
) -> RegimePriceVector:
    """Regime-conditional discount-bond prices by backward recursion.

    n is the number of grid steps to maturity; prices are evaluated at the
    current state x.  `max_terms` bounds the exponential-affine mixture per
    regime (1 selects the collapsed frozen-coefficient approximation).
    """
    if n < 0:
        raise PricingError("steps to maturity must be nonnegative")
    x = _as_state(x)
    x_ref = x if x_ref is None else _as_state(x_ref)
    labels = m.rate_chain.labels
    if n == 0:
        return RegimePriceVector(values=np.ones(len(labels)), maturity=0.0, labels=labels)
    c1 = short_rate_loadings(curve)
    c1_by_label = {lbl: c1 for lbl in labels}
    p_delta = transition_matrix(m.rate_chain, m.grid_delta).p
    mixtures, _, stats = _run_recursion(
        _rate_factor_params(m), c1_by_label, labels, p_delta, m.grid_delta, n, x_ref, max_terms
    )
    if stats.get("folded_mass", 0.0) > 1e-9:
        logger.info("pricing recursion folded %.2e relative mass", stats["folded_mass"])
    values = np.array([mixtures[lbl].value(x) for lbl in labels])
    return RegimePriceVector(values=values, maturity=n * m.grid_delta, labels=labels)


def mu_driver(m: ModelSpec, x, rate_label: str, credit_label: str) -> float:
    """Intensity driver c(credit|rate) * (x1 + x2) + x4, floored at 1e-8."""
    x = _as_state(x)
    raw = m.pass_through(rate_label, credit_label) * (x[0] + x[1]) + x[3]
    return float(max(raw, MU_FLOOR))


def mode_loadings(m: ModelSpec, mode_j: int, rate_label: str, credit_label: str) -> np.ndarray:
    """Kernel loadings of pricing mode j under a joint regime.

    The mode kernel discounts at the CDB rate while crediting d_j times the
    intensity driver, giving per-factor loadings
    (1 - d_j c, 1 - d_j c, 1, -d_j).
    """
    if m.rating is None:
        raise PricingError("model has no rating inputs")
    d = float(m.rating.decomposition.modes_d[mode_j])
    c = m.pass_through(rate_label, credit_label)
    return np.array([1.0 - d * c, 1.0 - d * c, 1.0, -d])


def _joint_setup(m: ModelSpec):
    labels = m.joint_labels
    p_delta = transition_matrix(m.joint_chain, m.grid_delta).p
    factor_params: list[dict] = []
    for f in range(3):
        factor_params.append({(r, c): m.rate_factors[f][r] for (r, c) in labels})
    factor_params.append({(r, c): m.credit_factor[c] for (r, c) in labels})
    return labels, p_delta, factor_params


def corporate_mode_values(
    m: ModelSpec,
    mode_j: int,
    x,
    n: int,
    *,
    max_terms: int = DEFAULT_MAX_TERMS,
    x_ref=None,
) -> RegimePriceVector:
    """Joint-regime mode-j continuation values by backward recursion."""
    if n < 0:
        raise PricingError("steps to maturity must be nonnegative")
    x = _as_state(x)
    x_ref = x if x_ref is None else _as_state(x_ref)
    labels, p_delta, factor_params = _joint_setup(m)
    if n == 0:
        return RegimePriceVector(values=np.ones(len(labels)), maturity=0.0, labels=labels)
    c1_by_label = {(r, c): mode_loadings(m, mode_j, r, c) for (r, c) in labels}
    mixtures, _, _ = _run_recursion(
        factor_params, c1_by_label, labels, p_delta, m.grid_delta, n, x_ref, max_terms
    )
    values = np.array([mixtures[lbl].value(x) for lbl in labels])
    return RegimePriceVector(values=values, maturity=n * m.grid_delta, labels=labels)


def corporate_price(
    m: ModelSpec,
    rating_label: str,
    x,
    n: int,
    *,
    max_terms: int = DEFAULT_MAX_TERMS,
    x_ref=None,
) -> RegimePriceVector:
    """Pre-default corporate bond value per joint regime: the survival-weight
    combination of mode values."""
    if m.rating is None:
        raise PricingError("model has no rating inputs")
    i = m.rating.rating_index(rating_label)
    if i >= len(m.rating.labels) - 1:
        raise PricingError("cannot price the default state")
    w = m.rating.decomposition.weights[i]
    total = None
    labels = m.joint_labels
    for j in range(m.rating.decomposition.n_modes):
        if w[j] == 0.0:
            continue
        uj = corporate_mode_values(m, j, x, n, max_terms=max_terms, x_ref=x_ref)
        total = w[j] * uj.values if total is None else total + w[j] * uj.values
    return RegimePriceVector(values=total, maturity=n * m.grid_delta, labels=labels)


def mix_prices(regime_prices: RegimePriceVector, beliefs) -> float:
    """Belief-weighted convex combination of regime-conditional prices."""
    b = np.asarray(beliefs, dtype=float)
    if b.shape != regime_prices.values.shape:
        raise DimensionMismatch("belief vector does not match the regime prices")
    if np.any(b < -1e-12) or abs(b.sum() - 1.0) > 1e-9:
        raise PricingError("beliefs must be a probability vector")
    return float(regime_prices.values @ b)


def price_to_yield(p: float, tau: float) -> float:
    """Continuously compounded zero-coupon yield -log(p)/tau."""
    if p <= 0.0:
        raise NonPositivePrice(f"price must be positive, got {p}")
    if tau <= 0.0:
        raise PricingError("maturity must be positive")
    return float(-np.log(p) / tau)


def spread_decomposition(y_cgb, y_cdb, y_corp) -> dict[str, np.ndarray]:
    """Additive yield split: sovereign level, policy-bank spread, corporate spread."""
    y_cgb, y_cdb, y_corp = (np.asarray(v, dtype=float) for v in (y_cgb, y_cdb, y_corp))
    if not (y_cgb.shape == y_cdb.shape == y_corp.shape):
        raise DimensionMismatch("yield inputs must share the maturity grid")
    return {
        "sovereign": y_cgb,
        "policy_bank_spread": y_cdb - y_cgb,
        "corporate_spread": y_corp - y_cdb,
    }


def prob_weighted_mean(series, weights) -> float:
    """Weighted mean with probability-path weights in [0, 1]."""
    s = np.asarray(series, dtype=float)
    w = np.asarray(weights, dtype=float)
    if s.shape != w.shape:
        raise DimensionMismatch("series and weights must align")
    if np.any(w < 0.0) or np.any(w > 1.0):
        raise PricingError("weights must lie in [0, 1]")
    mass = w.sum()
    if mass <= 0.0:
        raise ZeroWeightMass("weights carry no mass")
    return float((w @ s) / mass)


def discount_ladder(m: ModelSpec, curve: str, n_max: int, x_ref) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed affine coefficients (A, B) for every horizon up to n_max.

    Returns arrays A[label, n] and B[label, n, factors] such that the
    regime-conditional price is approximately exp(A - B . x), the regime
    mixture being collapsed to a value- and gradient-matched single term at
    x_ref after every step.  Exact whenever the mixture stays a single term
    (degenerate regimes or frozen chains).
    """
    x_ref = _as_state(x_ref)
    labels = m.rate_chain.labels
    c1 = np.tile(short_rate_loadings(curve), (len(labels), 1))
    p_delta = transition_matrix(m.rate_chain, m.grid_delta).p
    return _collapse_ladder(
        _rate_factor_params(m), labels, c1, p_delta, m.grid_delta, n_max, x_ref
    )


def corporate_mode_ladder(m: ModelSpec, mode_j: int, n_max: int, x_ref) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed affine coefficients per joint regime for pricing mode j."""
    x_ref = _as_state(x_ref)
    labels, p_delta, factor_params = _joint_setup(m)
    c1 = np.vstack([mode_loadings(m, mode_j, r, c) for (r, c) in labels])
    return _collapse_ladder(factor_params, labels, c1, p_delta, m.grid_delta, n_max, x_ref)


def _collapse_ladder(factor_params, labels, c1, p_delta, delta, n_max, x_ref):
    """Single-term ladder, vectorized over (regime, source-regime, factor).

    Carries one exponential-affine term per regime; each step transforms
    every source regime's term under every target regime's dynamics in one
    batched call and collapses the mixture at x_ref (value and gradient
    matched).  Zero transition weights are excluded exactly, so frozen
    chains reduce to plain per-regime composition.
    """
    n_labels = len(labels)
    n_factors = len(factor_params)
    kappa = np.array([[factor_params[f][lbl].kappa for f in range(n_factors)] for lbl in labels])
    theta = np.array([[factor_params[f][lbl].theta for f in range(n_factors)] for lbl in labels])
    alpha = np.array([[factor_params[f][lbl].alpha for f in range(n_factors)] for lbl in labels])
    beta = np.array([[factor_params[f][lbl].beta for f in range(n_factors)] for lbl in labels])
    with np.errstate(divide="ignore"):
        log_p = np.log(p_delta)
    a_out = np.zeros((n_labels, n_max + 1))
    b_out = np.zeros((n_labels, n_max + 1, n_factors))
    a_cur = np.zeros(n_labels)
    b_cur = np.zeros((n_labels, n_factors))
    for step in range(1, n_max + 1):
        a_f, b_f = affine_ab(
            kappa[:, None, :], theta[:, None, :], alpha[:, None, :], beta[:, None, :],
            c1[:, None, :], b_cur[None, :, :], delta,
        )
        log_v = log_p + a_cur[None, :] + a_f.sum(axis=2) - b_f @ x_ref  # (target, source)
        shift = log_v.max(axis=1, keepdims=True)
        v = np.exp(log_v - shift)
        tot = v.sum(axis=1)
        b_cur = np.einsum("ts,tsf->tf", v, b_f) / tot[:, None]
        a_cur = np.log(tot) + shift[:, 0] + b_cur @ x_ref
        a_out[:, step] = a_cur
        b_out[:, step] = b_cur
    return a_out, b_out
