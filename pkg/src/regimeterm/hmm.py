"""Gaussian hidden-Markov regime diagnostics.

Reduced-form companion to the structural model: multivariate Gaussian
emissions per state, EM (Baum-Welch) fitting with scaled forward-backward
recursions, information criteria, implied regime durations, and smoothed
classification.  States are canonically ordered by mean level (lowest
first), so a two-state fit reads as (low, high).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

_COV_FLOOR = 1e-8


class HmmError(ValueError):
    pass


class AbsorbingState(HmmError):
    pass


class DegenerateComponent(UserWarning):
    pass


@dataclass
class HmmModel:
    """K-state Gaussian HMM over an m-dimensional observation panel."""

    means: np.ndarray   # (K, m)
    covs: np.ndarray    # (K, m, m)
    trans: np.ndarray   # (K, K)
    init: np.ndarray    # (K,)
    flags: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float)
        self.trans = np.atleast_2d(np.asarray(self.trans, dtype=float))
        self.init = np.atleast_1d(np.asarray(self.init, dtype=float))
        k = self.means.shape[0]
        if self.trans.shape != (k, k) or self.init.shape != (k,):
            raise HmmError("inconsistent state dimensions")
        if np.any(np.abs(self.trans.sum(axis=1) - 1.0) > 1e-8):
            raise HmmError("transition rows must sum to one")
        if abs(self.init.sum() - 1.0) > 1e-8:
            raise HmmError("initial distribution must sum to one")

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def m(self) -> int:
        return self.means.shape[1]

    def level(self) -> np.ndarray:
        """Scalar mean level per state (average across observation dims)."""
        return self.means.mean(axis=1)


def _log_gauss(y: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    m = y.shape[1]
    chol = np.linalg.cholesky(cov)
    dev = y - mean[None, :]
    z = np.linalg.solve(chol, dev.T)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (m * np.log(2.0 * np.pi) + logdet + np.sum(z * z, axis=0))


def _emission_logprobs(model: HmmModel, y: np.ndarray) -> np.ndarray:
    return np.stack([_log_gauss(y, model.means[j], model.covs[j]) for j in range(model.k)], axis=1)


def forward_backward(model: HmmModel, y: np.ndarray):
    """Scaled forward-backward pass.

    Returns (loglik, gamma (T, K), xi_sum (K, K)) where gamma holds smoothed
    state probabilities and xi_sum the expected transition counts.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    t_len = y.shape[0]
    k = model.k
    logb = _emission_logprobs(model, y)
    b = np.exp(logb - logb.max(axis=1, keepdims=True))
    scale_shift = logb.max(axis=1)

    alpha = np.empty((t_len, k))
    c = np.empty(t_len)
    alpha[0] = model.init * b[0]
    c[0] = alpha[0].sum()
    alpha[0] /= c[0]
    for t in range(1, t_len):
        alpha[t] = (alpha[t - 1] @ model.trans) * b[t]
        c[t] = alpha[t].sum()
        alpha[t] /= c[t]
    loglik = float(np.sum(np.log(c)) + np.sum(scale_shift))

    beta = np.empty((t_len, k))
    beta[-1] = 1.0
    for t in range(t_len - 2, -1, -1):
        beta[t] = (model.trans @ (b[t + 1] * beta[t + 1])) / c[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)

    xi_sum = np.zeros((k, k))
    for t in range(t_len - 1):
        xi = model.trans * np.outer(alpha[t], b[t + 1] * beta[t + 1]) / c[t + 1]
        xi_sum += xi
    return loglik, gamma, xi_sum


def _kmeans_means(y: np.ndarray, k: int, rng: np.random.Generator, iters: int = 10) -> np.ndarray:
    idx = rng.choice(y.shape[0], size=k, replace=False)
    means = y[idx].copy()
    for _ in range(iters):
        d = np.linalg.norm(y[:, None, :] - means[None, :, :], axis=2)
        assign = d.argmin(axis=1)
        for j in range(k):
            sel = assign == j
            if np.any(sel):
                means[j] = y[sel].mean(axis=0)
    return means


def _sort_states(model: HmmModel) -> HmmModel:
    order = np.argsort(model.level())
    return HmmModel(
        means=model.means[order],
        covs=model.covs[order],
        trans=model.trans[np.ix_(order, order)],
        init=model.init[order],
        flags=model.flags,
    )


def fit_hmm(
    y: np.ndarray,
    k: int,
    seed: int = 0,
    restarts: int = 10,
    cov_type: str = "full",
    tol: float = 1e-8,
    max_iter: int = 500,
) -> tuple[HmmModel, float]:
    """Best-of-restarts EM fit; the log-likelihood is monotone within a run.

    Rows containing any NaN are dropped with a warning.  A state claiming
    fewer than two observations has its covariance floored and the model is
    flagged as degenerate.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.ndim == 2 and y.shape[0] == 1 and y.shape[1] > 1:
        y = y.T
    keep = np.all(np.isfinite(y), axis=1)
    if not np.all(keep):
        warnings.warn(f"dropping {np.sum(~keep)} rows with missing entries", stacklevel=2)
        y = y[keep]
    t_len, m = y.shape
    if t_len <= 10 * k:
        raise HmmError("panel is too short for the requested number of states")

    best_model, best_loglik = None, -np.inf
    for r in range(restarts):
        rng = np.random.default_rng(seed + r)
        means = _kmeans_means(y, k, rng)
        base_cov = np.cov(y.T) if m > 1 else np.array([[np.var(y[:, 0])]])
        base_cov = np.atleast_2d(base_cov) + _COV_FLOOR * np.eye(m)
        covs = np.stack([base_cov.copy() for _ in range(k)])
        trans = np.full((k, k), 0.05 / max(k - 1, 1))
        np.fill_diagonal(trans, 0.95 if k > 1 else 1.0)
        trans /= trans.sum(axis=1, keepdims=True)
        model = HmmModel(means=means, covs=covs, trans=trans, init=np.full(k, 1.0 / k))

        prev = -np.inf
        flags: list[str] = []
        for _ in range(max_iter):
            loglik, gamma, xi_sum = forward_backward(model, y)
            if loglik < prev - 1e-10:
                raise HmmError("EM log-likelihood decreased; numerical failure")
            if np.isfinite(prev) and abs(loglik - prev) <= tol * max(1.0, abs(prev)):
                prev = loglik
                break
            prev = loglik
            weight = gamma.sum(axis=0)
            means = (gamma.T @ y) / weight[:, None]
            covs = np.empty((k, m, m))
            for j in range(k):
                dev = y - means[j][None, :]
                cov = (gamma[:, j][:, None] * dev).T @ dev / weight[j]
                if weight[j] < 2.0:
                    cov = cov + _COV_FLOOR * np.eye(m)
                    if "degenerate" not in flags:
                        flags.append("degenerate")
                        warnings.warn(
                            f"state {j} carries weight {weight[j]:.2f}; covariance floored",
                            DegenerateComponent,
                            stacklevel=2,
                        )
                if cov_type == "diagonal":
                    cov = np.diag(np.diag(cov))
                covs[j] = cov + _COV_FLOOR * np.eye(m)
            if k > 1:
                trans = xi_sum / xi_sum.sum(axis=1, keepdims=True)
            init = gamma[0] / gamma[0].sum()
            model = HmmModel(means=means, covs=covs, trans=trans, init=init, flags=tuple(flags))
        if prev > best_loglik:
            best_model, best_loglik = model, prev
    return _sort_states(best_model), float(best_loglik)


def information_criteria(loglik: float, k: int, m: int, t_len: int) -> tuple[float, float]:
    """AIC/BIC with p = K*m + K*m(m+1)/2 + K(K-1) + (K-1) free parameters."""
    p = k * m + k * m * (m + 1) // 2 + k * (k - 1) + (k - 1)
    aic = -2.0 * loglik + 2.0 * p
    bic = -2.0 * loglik + p * np.log(t_len)
    return float(aic), float(bic)


def regime_durations(trans: np.ndarray, delta: float) -> np.ndarray:
    """Expected sojourn per state in years: delta / (1 - p_ii)."""
    trans = np.atleast_2d(np.asarray(trans, dtype=float))
    diag = np.diag(trans)
    if np.any(diag >= 1.0):
        raise AbsorbingState("a self-transition probability of one implies an infinite duration")
    return delta / (1.0 - diag)


def classify(model: HmmModel, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed state probabilities and the induced state path (argmax).

    The model's states are already level-ordered, so index 0 is the lowest
    regime; for two states this is the conventional low/high split at a
    one-half cutoff.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    keep = np.all(np.isfinite(y), axis=1)
    y = y[keep]
    _, gamma, _ = forward_backward(model, y)
    return gamma.argmax(axis=1), gamma
