"""Unscented Kalman filtering with regime switching.

The regime-switching filter follows the collapse/predict/update pattern:
the previous regime-mixture posterior is collapsed to a single Gaussian
(moment matching), each regime predicts and updates from that common prior,
and the regime beliefs advance through the transition matrix and Bayes'
rule.  The log-likelihood accumulates the log of the regime-mixture
predictive density, evaluated in log space with a max shift.

Two filters compose block-recursively: the rate-block filter runs on
government and policy-bank yields over the three rate factors and emits a
per-date summary (regime-conditional filtered means/covariances plus regime
beliefs); the credit-block filter runs conditionally on each rate regime
over the credit factor, with corporate yields priced at the injected
regime-conditional rate states.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .affine import GcirParams
from .model import RATE_CURVES, FullModel
from .pricing import corporate_mode_ladder, discount_ladder
from .regimes import stationary_distribution, transition_matrix

logger = logging.getLogger(__name__)

_JITTER = 1e-10
_LOG2PI = float(np.log(2.0 * np.pi))


class FilterError(ValueError):
    pass


class CholeskyFailure(FilterError):
    pass


class SingularInnovationCov(FilterError):
    pass


class ZeroMixtureLikelihood(FilterError):
    pass


@dataclass(frozen=True)
class UtParams:
    """Scaled unscented-transform hyperparameters."""

    alpha: float = 0.1
    beta: float = 2.0
    kappa: float = 0.0


@dataclass
class GaussianBelief:
    """Gaussian state belief; covariance symmetrized on construction."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if np.abs(cov - cov.T).max() > 1e-12 * max(1.0, np.abs(cov).max()):
            raise FilterError("covariance must be symmetric")
        self.cov = 0.5 * (cov + cov.T)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class RegimeBeliefs:
    """Probability vector over regimes."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-12:
            raise FilterError("regime beliefs must form a probability vector")


@dataclass(frozen=True)
class SigmaSet:
    points: np.ndarray
    mean_weights: np.ndarray
    cov_weights: np.ndarray


def _chol_psd(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jittered = cov + _JITTER * np.eye(cov.shape[0])
        try:
            return np.linalg.cholesky(jittered)
        except np.linalg.LinAlgError as exc:
            raise CholeskyFailure("covariance is not positive semidefinite after jitter") from exc


def sigma_points(b: GaussianBelief, ut: UtParams = UtParams()) -> SigmaSet:
    """Scaled unscented transform: 2d+1 points reproducing mean and covariance."""
    d = b.dim
    lam = ut.alpha**2 * (d + ut.kappa) - d
    scale = d + lam
    if scale <= 0.0:
        raise FilterError("unscented scaling d + lambda must be positive")
    root = _chol_psd(b.cov) * np.sqrt(scale)
    points = np.empty((2 * d + 1, d))
    points[0] = b.mean
    points[1 : d + 1] = b.mean[None, :] + root.T
    points[d + 1 :] = b.mean[None, :] - root.T
    wm = np.full(2 * d + 1, 1.0 / (2.0 * scale))
    wc = wm.copy()
    wm[0] = lam / scale
    wc[0] = lam / scale + (1.0 - ut.alpha**2 + ut.beta)
    return SigmaSet(points=points, mean_weights=wm, cov_weights=wc)


def gcir_step_moments(p: GcirParams, x, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact conditional mean and variance of a GCIR factor over delta.

    mean = theta + (x - theta) e^{-kappa delta};
    var  = (alpha + beta theta)(1 - e^{-2 kappa delta})/(2 kappa)
           + beta (x - theta)(e^{-kappa delta} - e^{-2 kappa delta})/kappa,
    evaluated with expm1 so the kappa -> 0 limit is stable.
    """
    x = np.asarray(x, dtype=float)
    kd = p.kappa * delta
    e1 = np.exp(-kd)
    mean = p.theta + (x - p.theta) * e1
    if p.kappa != 0.0:
        one_m_e2 = -np.expm1(-2.0 * kd)
        base = (p.alpha + p.beta * p.theta) * one_m_e2 / (2.0 * p.kappa)
        slope = p.beta * (e1 - np.exp(-2.0 * kd)) / p.kappa
    else:
        base = (p.alpha + p.beta * p.theta) * delta
        slope = p.beta * delta * np.ones_like(e1)
    var = base + slope * (x - p.theta)
    return mean, np.maximum(var, 0.0)


class GcirTransition:
    """One-step transition of a factor block with frozen-regime dynamics.

    Means are exact conditional means; process noise is the exact conditional
    variance evaluated at the weighted point mean (the conditional variance
    is affine in the state, so this equals the weighted average across sigma
    points), with optional cross-factor correlation applied as
    corr[i, j] * sqrt(var_i * var_j).  Both maps are affine in the state, so
    `exact_moments` reproduces the unscented prediction in closed form.
    """

    def __init__(self, params: Sequence[GcirParams], delta: float, corr: np.ndarray | None = None):
        self.params = list(params)
        self.delta = delta
        self.corr = corr
        d = len(self.params)
        self._theta = np.array([p.theta for p in self.params])
        self._decay = np.empty(d)
        self._var_base = np.empty(d)
        self._var_slope = np.empty(d)
        for f, p in enumerate(self.params):
            kd = p.kappa * delta
            e1 = np.exp(-kd)
            self._decay[f] = e1
            if p.kappa != 0.0:
                self._var_base[f] = (p.alpha + p.beta * p.theta) * (-np.expm1(-2.0 * kd)) / (2.0 * p.kappa)
                self._var_slope[f] = p.beta * (e1 - np.exp(-2.0 * kd)) / p.kappa
            else:
                self._var_base[f] = (p.alpha + p.beta * p.theta) * delta
                self._var_slope[f] = p.beta * delta
        self._offset = self._theta * (1.0 - self._decay)

    def mean(self, points: np.ndarray) -> np.ndarray:
        return self._offset[None, :] + points * self._decay[None, :]

    def _variance_at(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(self._var_base + self._var_slope * (x - self._theta), 0.0)

    def noise(self, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
        avg_var = self._variance_at(weights @ points)
        if self.corr is None:
            return np.diag(avg_var)
        d = len(self.params)
        sd = np.sqrt(avg_var)
        return self.corr[:d, :d] * np.outer(sd, sd)

    def exact_moments(self, mean: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x_pred = self._offset + mean * self._decay
        p_pred = cov * np.outer(self._decay, self._decay)
        q_mat = self.noise(mean[None, :], np.ones(1))
        return x_pred, p_pred + q_mat


class AffineMeasurement:
    """y = intercept + slope @ x; advertises its linearity so the filter can
    take the algebraically identical closed-form route."""

    def __init__(self, intercept: np.ndarray, slope: np.ndarray):
        self.linear = (np.asarray(intercept, dtype=float), np.asarray(slope, dtype=float))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        b0, h_mat = self.linear
        return b0[None, :] + points @ h_mat.T


class LinearTransition:
    """x' = F x + c + w, w ~ N(0, Q); used for exactness checks."""

    def __init__(self, f_mat: np.ndarray, q_mat: np.ndarray, shift: np.ndarray | None = None):
        self.f_mat = np.asarray(f_mat, dtype=float)
        self.q_mat = np.asarray(q_mat, dtype=float)
        self.shift = np.zeros(self.f_mat.shape[0]) if shift is None else np.asarray(shift, float)

    def mean(self, points: np.ndarray) -> np.ndarray:
        return points @ self.f_mat.T + self.shift[None, :]

    def noise(self, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return self.q_mat


@dataclass
class UkfStepResult:
    belief: GaussianBelief
    predicted: GaussianBelief
    loglik: float
    innovation: np.ndarray | None
    innovation_cov: np.ndarray | None


def _mvn_logpdf(resid: np.ndarray, cov: np.ndarray) -> float:
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        try:
            chol = np.linalg.cholesky(cov + _JITTER * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise SingularInnovationCov("innovation covariance is singular after jitter") from exc
    y = solve_triangular(chol, resid, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (resid.size * _LOG2PI + logdet + y @ y))


def ukf_step(
    b_prev: GaussianBelief,
    y: np.ndarray,
    transition,
    measurement: Callable[[np.ndarray], np.ndarray],
    noise_cov: np.ndarray,
    ut: UtParams = UtParams(),
) -> UkfStepResult:
    """One unscented predict/update cycle with missing-data masking.

    `y` may contain NaN entries (treated as missing); a fully missing
    observation leaves the predicted belief unchanged and contributes zero
    log-likelihood.  Measurement sigma points are redrawn from the predicted
    belief so the filter is exact on linear-Gaussian models.  Transitions
    exposing `exact_moments` and measurements exposing `linear` take
    closed-form shortcuts; the unscented transform is exact on such maps, so
    the result is unchanged.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    exact = getattr(transition, "exact_moments", None)
    if exact is not None:
        x_pred, p_pred = exact(b_prev.mean, b_prev.cov)
        p_pred = 0.5 * (p_pred + p_pred.T)
    else:
        sp = sigma_points(b_prev, ut)
        prop = transition.mean(sp.points)
        x_pred = sp.mean_weights @ prop
        dev = prop - x_pred[None, :]
        p_pred = (dev * sp.cov_weights[:, None]).T @ dev
        p_pred = 0.5 * (p_pred + p_pred.T) + transition.noise(sp.points, sp.mean_weights)
        p_pred = 0.5 * (p_pred + p_pred.T)
    predicted = GaussianBelief(mean=x_pred, cov=p_pred)

    mask = np.isfinite(y)
    if not np.any(mask):
        return UkfStepResult(
            belief=GaussianBelief(mean=x_pred.copy(), cov=p_pred.copy()),
            predicted=predicted,
            loglik=0.0,
            innovation=None,
            innovation_cov=None,
        )

    noise_cov = np.atleast_2d(noise_cov)
    linear = getattr(measurement, "linear", None)
    if linear is not None:
        b0, h_mat = linear
        h_m = h_mat[mask]
        y_hat = b0[mask] + h_m @ x_pred
        s_mat = h_m @ p_pred @ h_m.T + noise_cov[np.ix_(mask, mask)]
        s_mat = 0.5 * (s_mat + s_mat.T)
        p_xy = p_pred @ h_m.T
    else:
        sp2 = sigma_points(predicted, ut)
        obs = np.atleast_2d(measurement(sp2.points))
        obs = obs[:, mask]
        y_hat = sp2.mean_weights @ obs
        obs_dev = obs - y_hat[None, :]
        state_dev = sp2.points - x_pred[None, :]
        s_mat = (obs_dev * sp2.cov_weights[:, None]).T @ obs_dev + noise_cov[np.ix_(mask, mask)]
        s_mat = 0.5 * (s_mat + s_mat.T)
        p_xy = (state_dev * sp2.cov_weights[:, None]).T @ obs_dev
    try:
        gain = np.linalg.solve(s_mat, p_xy.T).T
    except np.linalg.LinAlgError:
        try:
            gain = np.linalg.solve(s_mat + _JITTER * np.eye(s_mat.shape[0]), p_xy.T).T
        except np.linalg.LinAlgError as exc:
            raise SingularInnovationCov("innovation covariance is singular after jitter") from exc
    innovation = y[mask] - y_hat
    x_post = x_pred + gain @ innovation
    p_post = p_pred - gain @ s_mat @ gain.T
    p_post = 0.5 * (p_post + p_post.T)
    loglik = _mvn_logpdf(innovation, s_mat)
    return UkfStepResult(
        belief=GaussianBelief(mean=x_post, cov=p_post),
        predicted=predicted,
        loglik=loglik,
        innovation=innovation,
        innovation_cov=s_mat,
    )


def gray_collapse(beliefs: RegimeBeliefs, moments: Sequence[GaussianBelief]) -> GaussianBelief:
    """Moment-matched single Gaussian of a regime mixture, including the
    between-regime mean-spread term."""
    probs = beliefs.probs
    mean = sum(p * m.mean for p, m in zip(probs, moments))
    d = moments[0].dim
    cov = np.zeros((d, d))
    for p, m in zip(probs, moments):
        diff = m.mean - mean
        cov += p * (m.cov + np.outer(diff, diff))
    return GaussianBelief(mean=mean, cov=cov)


@dataclass
class RsUkfStepResult:
    beliefs: list[GaussianBelief]
    predicted: list[GaussianBelief]
    probs: RegimeBeliefs
    loglik: float
    log_densities: np.ndarray


def rs_ukf_step(
    prev_beliefs: Sequence[GaussianBelief],
    prev_probs: RegimeBeliefs,
    y: np.ndarray,
    regime_models: Sequence[tuple],
    p_delta: np.ndarray,
    ut: UtParams = UtParams(),
) -> RsUkfStepResult:
    """One regime-switching UKF cycle.

    regime_models[j] = (transition, measurement, noise_cov) for regime j.
    The previous mixture is collapsed before prediction; per-regime updated
    beliefs are retained for downstream regime-conditional consumers.
    """
    n_regimes = len(regime_models)
    collapsed = gray_collapse(prev_probs, list(prev_beliefs)) if n_regimes > 1 else prev_beliefs[0]
    results = []
    log_f = np.empty(n_regimes)
    for j, (transition, measurement, noise_cov) in enumerate(regime_models):
        res = ukf_step(collapsed, y, transition, measurement, noise_cov, ut)
        results.append(res)
        log_f[j] = res.loglik
    pi_pred = prev_probs.probs @ p_delta
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    if not np.any(np.isfinite(y_arr)):
        # no information: beliefs advance by prediction, probabilities by the chain
        return RsUkfStepResult(
            beliefs=[r.belief for r in results],
            predicted=[r.predicted for r in results],
            probs=RegimeBeliefs(probs=pi_pred / pi_pred.sum()),
            loglik=0.0,
            log_densities=log_f,
        )
    with np.errstate(divide="ignore"):
        log_mix = np.log(pi_pred) + log_f
    shift = log_mix.max()
    if not np.isfinite(shift):
        raise ZeroMixtureLikelihood("all regime-conditional densities underflowed")
    lse = shift + np.log(np.sum(np.exp(log_mix - shift)))
    post = np.exp(log_mix - lse)
    return RsUkfStepResult(
        beliefs=[r.belief for r in results],
        predicted=[r.predicted for r in results],
        probs=RegimeBeliefs(probs=post / post.sum()),
        loglik=float(lse),
        log_densities=log_f,
    )


@dataclass(frozen=True)
class RateBlockSummary:
    """Finite-dimensional first-stage posterior summary injected downstream."""

    means: np.ndarray  # (n_rate_regimes, 3)
    covs: np.ndarray   # (n_rate_regimes, 3, 3)
    probs: np.ndarray  # (n_rate_regimes,)


@dataclass
class RateFilterResult:
    loglik: float
    loglik_contributions: np.ndarray
    probs: np.ndarray               # (T, S)
    regime_means: np.ndarray        # (T, S, 3)
    regime_covs: np.ndarray         # (T, S, 3, 3)
    collapsed_means: np.ndarray     # (T, 3)
    summaries: list[RateBlockSummary]
    rate_labels: tuple[str, ...]


def _initial_factor_belief(params: Sequence[GcirParams], inflate: float) -> GaussianBelief:
    mean = np.array([p.theta for p in params])
    var = np.array([(p.alpha + p.beta * p.theta) / (2.0 * p.kappa) if p.kappa > 0 else
                    (p.alpha + p.beta * p.theta) for p in params])
    return GaussianBelief(mean=mean, cov=np.diag(np.maximum(var, 1e-12)) * inflate)


def rate_measurement_maps(model: FullModel, x_ref=None):
    """Per-regime affine yield maps from the collapsed pricing ladders.

    Returns {regime: (intercept (m,), slope (m, 3))} stacking CGB then CDB
    maturities; yields are intercept + slope @ x.
    """
    spec = model.pricing_spec()
    steps = model.maturity_steps()
    n_max = int(steps.max())
    x_ref = model.reference_state() if x_ref is None else np.asarray(x_ref, dtype=float)
    taus = np.asarray(model.maturities, dtype=float)
    labels = model.rate_chain.labels
    intercepts = {lbl: [] for lbl in labels}
    slopes = {lbl: [] for lbl in labels}
    for curve in RATE_CURVES:
        a_lad, b_lad = discount_ladder(spec, curve, n_max, x_ref)
        for si, lbl in enumerate(labels):
            intercepts[lbl].append(-a_lad[si, steps] / taus)
            slopes[lbl].append(b_lad[si, steps, :3] / taus[:, None])
    return {
        lbl: (np.concatenate(intercepts[lbl]), np.vstack(slopes[lbl])) for lbl in labels
    }


def rate_block_filter(
    yields: np.ndarray,
    model: FullModel,
    ut: UtParams = UtParams(),
    x_ref=None,
) -> RateFilterResult:
    """First-stage filter over the three rate factors and the rate regime.

    `yields` is (T, 2 * n_maturities) stacking CGB then CDB columns; NaNs
    mark missing entries.
    """
    yields = np.atleast_2d(np.asarray(yields, dtype=float))
    n_dates = yields.shape[0]
    labels = model.rate_chain.labels
    n_reg = len(labels)
    expected_cols = 2 * len(model.maturities)
    if yields.shape[1] != expected_cols:
        raise FilterError(f"expected {expected_cols} yield columns, got {yields.shape[1]}")

    maps = rate_measurement_maps(model, x_ref)
    p_delta = transition_matrix(model.rate_chain, model.grid_delta).p
    theta_spread = max(
        abs(model.rate_factors[f].params[a].theta - model.rate_factors[f].params[b].theta)
        for f in range(3)
        for a in labels
        for b in labels
    )
    inflate = 10.0 if theta_spread > 1e-12 else 1.0

    regime_models = []
    for lbl in labels:
        params = [model.rate_factors[f].params[lbl] for f in range(3)]
        corr = model.corr[:3, :3] if model.corr is not None else None
        transition = GcirTransition(params, model.grid_delta, corr)
        intercept, slope = maps[lbl]
        noise_cov = np.diag(model.rate_noise_vector(lbl) ** 2)
        regime_models.append((transition, AffineMeasurement(intercept, slope), noise_cov))

    beliefs = [
        _initial_factor_belief([model.rate_factors[f].params[lbl] for f in range(3)], inflate)
        for lbl in labels
    ]
    probs = RegimeBeliefs(probs=stationary_distribution(model.rate_chain))

    contributions = np.empty(n_dates)
    probs_path = np.empty((n_dates, n_reg))
    means_path = np.empty((n_dates, n_reg, 3))
    covs_path = np.empty((n_dates, n_reg, 3, 3))
    collapsed_path = np.empty((n_dates, 3))
    summaries: list[RateBlockSummary] = []
    for t in range(n_dates):
        step = rs_ukf_step(beliefs, probs, yields[t], regime_models, p_delta, ut)
        beliefs, probs = step.beliefs, step.probs
        contributions[t] = step.loglik
        probs_path[t] = probs.probs
        for j in range(n_reg):
            means_path[t, j] = beliefs[j].mean
            covs_path[t, j] = beliefs[j].cov
        collapsed_path[t] = gray_collapse(probs, beliefs).mean if n_reg > 1 else beliefs[0].mean
        summaries.append(
            RateBlockSummary(means=means_path[t].copy(), covs=covs_path[t].copy(), probs=probs.probs.copy())
        )
    return RateFilterResult(
        loglik=float(contributions.sum()),
        loglik_contributions=contributions,
        probs=probs_path,
        regime_means=means_path,
        regime_covs=covs_path,
        collapsed_means=collapsed_path,
        summaries=summaries,
        rate_labels=labels,
    )


@dataclass
class CreditFilterResult:
    loglik: float
    loglik_contributions: np.ndarray
    conditional_probs: np.ndarray   # (T, S_r, S_c)
    marginal_probs: np.ndarray      # (T, S_c)
    conditional_means: np.ndarray   # (T, S_r, S_c)
    conditional_vars: np.ndarray    # (T, S_r, S_c)
    credit_labels: tuple[str, ...]


def credit_measurement_ladders(model: FullModel, x_ref=None):
    """Collapsed mode ladders per joint regime at the observed maturities.

    Returns (a[j, S, m], b[j, S, m, 4]) arrays over modes j, joint regimes S
    (rate-major order), and maturities m.
    """
    if model.rating is None:
        raise FilterError("credit filtering requires rating inputs")
    spec = model.pricing_spec()
    steps = model.maturity_steps()
    n_max = int(steps.max())
    x_ref = model.reference_state() if x_ref is None else np.asarray(x_ref, dtype=float)
    n_modes = model.rating.decomposition.n_modes
    a_all, b_all = [], []
    for j in range(n_modes):
        a_lad, b_lad = corporate_mode_ladder(spec, j, n_max, x_ref)
        a_all.append(a_lad[:, steps])
        b_all.append(b_lad[:, steps, :])
    return np.stack(a_all), np.stack(b_all)


def credit_block_filter(
    yields: np.ndarray,
    model: FullModel,
    summaries: Sequence[RateBlockSummary],
    ut: UtParams = UtParams(),
    x_ref=None,
) -> CreditFilterResult:
    """Second-stage filter over the credit factor and credit regime.

    Runs one conditional regime-switching filter per rate regime, pricing
    corporate yields at that regime's injected filtered rate states, and
    mixes the per-date predictive densities with the filtered rate-regime
    beliefs.  `yields` is (T, n_ratings * n_maturities), rating-major.
    """
    if model.rating is None:
        raise FilterError("credit filtering requires rating inputs")
    yields = np.atleast_2d(np.asarray(yields, dtype=float))
    n_dates = yields.shape[0]
    if len(summaries) != n_dates:
        raise FilterError("rate-block summaries must cover every panel date")
    r_labels = model.rate_chain.labels
    c_labels = model.credit_chain.labels
    n_r, n_c = len(r_labels), len(c_labels)
    taus = np.asarray(model.maturities, dtype=float)
    n_m = len(taus)
    ratings = model.observed_ratings
    if yields.shape[1] != len(ratings) * n_m:
        raise FilterError("credit panel width must be n_ratings * n_maturities")
    w_rows = np.stack(
        [model.rating.decomposition.weights[model.rating.rating_index(r)] for r in ratings]
    )
    a_lad, b_lad = credit_measurement_ladders(model, x_ref)

    p_delta_c = transition_matrix(model.credit_chain, model.grid_delta).p
    pi_c0 = stationary_distribution(model.credit_chain)
    theta_spread = max(
        abs(model.credit_factor.params[a].theta - model.credit_factor.params[b].theta)
        for a in c_labels
        for b in c_labels
    )
    inflate = 10.0 if theta_spread > 1e-12 else 1.0

    transitions = {}
    noise_covs = {}
    for cl in c_labels:
        p = model.credit_factor.params[cl]
        corr = model.corr[3:, 3:] if model.corr is not None else None
        transitions[cl] = GcirTransition([p], model.grid_delta, corr)
        noise_covs[cl] = np.diag(model.credit_noise_vector(cl) ** 2)

    beliefs = {
        rl: [
            _initial_factor_belief([model.credit_factor.params[cl]], inflate) for cl in c_labels
        ]
        for rl in r_labels
    }
    cond_probs = {rl: RegimeBeliefs(probs=pi_c0.copy()) for rl in r_labels}

    contributions = np.empty(n_dates)
    cond_path = np.empty((n_dates, n_r, n_c))
    marg_path = np.empty((n_dates, n_c))
    mean_path = np.empty((n_dates, n_r, n_c))
    var_path = np.empty((n_dates, n_r, n_c))
    joint_index = {(ri, ci): ri * n_c + ci for ri in range(n_r) for ci in range(n_c)}

    for t in range(n_dates):
        summary = summaries[t]
        date_density_terms = []
        y_t = yields[t]
        observed = np.any(np.isfinite(y_t))
        for ri, rl in enumerate(r_labels):
            x_rate = np.concatenate([summary.means[ri], [0.0]])
            regime_models = []
            for ci, cl in enumerate(c_labels):
                s_joint = joint_index[(ri, ci)]
                a_j = a_lad[:, s_joint, :]               # (modes, mats)
                b_rate = b_lad[:, s_joint, :, :3]        # (modes, mats, 3)
                b_credit = b_lad[:, s_joint, :, 3]       # (modes, mats)
                log_base = a_j - np.einsum("jmk,k->jm", b_rate, summary.means[ri])

                def measurement(points, log_base=log_base, b_credit=b_credit):
                    expo = log_base[None, :, :] - points[:, 0][:, None, None] * b_credit[None, :, :]
                    modes = np.exp(expo)                  # (N, modes, mats)
                    v = np.einsum("rj,njm->nrm", w_rows, modes)
                    v = np.maximum(v, 1e-300)  # far-tail sigma points with signed weights
                    return (-np.log(v) / taus[None, None, :]).reshape(points.shape[0], -1)

                regime_models.append((transitions[cl], measurement, noise_covs[cl]))
            step = rs_ukf_step(beliefs[rl], cond_probs[rl], y_t, regime_models, p_delta_c, ut)
            beliefs[rl] = step.beliefs
            cond_probs[rl] = step.probs
            cond_path[t, ri] = step.probs.probs
            for ci in range(n_c):
                mean_path[t, ri, ci] = step.beliefs[ci].mean[0]
                var_path[t, ri, ci] = step.beliefs[ci].cov[0, 0]
            date_density_terms.append(step.loglik)
        if observed:
            log_terms = np.log(summary.probs + 1e-300) + np.asarray(date_density_terms)
            shift = log_terms.max()
            contributions[t] = shift + np.log(np.sum(np.exp(log_terms - shift)))
        else:
            contributions[t] = 0.0
        marg_path[t] = summary.probs @ cond_path[t]
    return CreditFilterResult(
        loglik=float(contributions.sum()),
        loglik_contributions=contributions,
        conditional_probs=cond_path,
        marginal_probs=marg_path,
        conditional_means=mean_path,
        conditional_vars=var_path,
        credit_labels=c_labels,
    )
