"""Quasi-maximum-likelihood estimation machinery.

Parameters optimize on an unconstrained scale through per-parameter
transforms (log for positives, logit for unit-interval, identity
otherwise).  The maximizer is derivative-free: multi-start Nelder-Mead
followed by a coordinate-wise quadratic polish, which tolerates the mild
non-smoothness of filtered likelihoods.  Inference uses finite-difference
sandwich covariances over per-date likelihood contributions and an optional
circular block bootstrap.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .simulate import make_rng


class EstimationError(ValueError):
    pass


class NonFiniteLikelihood(EstimationError):
    pass


class TooFewSuccessfulReplicates(EstimationError):
    pass


class SingularHessianWarning(UserWarning):
    pass


_TRANSFORMS = {
    "log": (np.log, np.exp),
    "logit": (lambda p: np.log(p / (1.0 - p)), lambda z: 1.0 / (1.0 + np.exp(-z))),
    "identity": (lambda v: v, lambda z: z),
}


@dataclass(frozen=True)
class ParamSpec:
    name: str
    transform: str = "identity"

    def __post_init__(self) -> None:
        if self.transform not in _TRANSFORMS:
            raise EstimationError(f"unknown transform {self.transform!r}")


class ParamVector:
    """Ordered free parameters with invertible scalar transforms."""

    def __init__(self, specs: Sequence[ParamSpec]):
        self.specs = list(specs)
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise EstimationError("parameter names must be unique")

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def __len__(self) -> int:
        return len(self.specs)

    def encode(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return np.array(
            [_TRANSFORMS[s.transform][0](v) for s, v in zip(self.specs, values)]
        )

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.array([_TRANSFORMS[s.transform][1](v) for s, v in zip(self.specs, z)])


@dataclass
class OptimizerConfig:
    starts: int = 5
    perturb: float = 0.1
    max_iter: int = 2000
    xatol: float = 1e-6
    fatol: float = 1e-8
    polish_sweeps: int = 2
    polish_step: float = 1e-3
    seed: int = 0


@dataclass
class EstimationResult:
    names: list[str]
    estimates: np.ndarray
    loglik: float
    robust_cov: np.ndarray | None = None
    robust_se: np.ndarray | None = None
    bootstrap_cov: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    seed: int = 0

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.estimates)}


def maximize(
    objective: Callable[[np.ndarray], float],
    z0: np.ndarray,
    config: OptimizerConfig = OptimizerConfig(),
) -> tuple[np.ndarray, float, dict]:
    """Derivative-free maximization on the unconstrained scale.

    Runs `starts` Nelder-Mead searches (the first from z0, the rest from
    Gaussian perturbations), keeps the best, and applies coordinate-wise
    quadratic polishing.  Never returns a point below the best evaluated
    value, including the start.
    """
    z0 = np.asarray(z0, dtype=float)
    f0 = objective(z0)
    if not np.isfinite(f0):
        raise NonFiniteLikelihood("objective is not finite at the starting point")
    rng = make_rng(config.seed, 900)
    best_z, best_f = z0.copy(), f0
    n_evals = 1
    for s in range(config.starts):
        start = z0 if s == 0 else z0 + config.perturb * rng.standard_normal(z0.shape)
        res = minimize(
            lambda z: -objective(z),
            start,
            method="Nelder-Mead",
            options={
                "maxiter": config.max_iter,
                "maxfev": config.max_iter * 2,
                "xatol": config.xatol,
                "fatol": config.fatol,
            },
        )
        n_evals += res.nfev
        if np.isfinite(res.fun) and -res.fun > best_f:
            best_z, best_f = res.x.copy(), -res.fun

    # coordinate-wise quadratic polish
    h = config.polish_step
    for _ in range(config.polish_sweeps):
        improved = False
        for i in range(best_z.size):
            zp, zm = best_z.copy(), best_z.copy()
            zp[i] += h
            zm[i] -= h
            fp, fm = objective(zp), objective(zm)
            n_evals += 2
            denom = fp - 2.0 * best_f + fm
            if np.isfinite(fp) and np.isfinite(fm) and denom < 0.0:
                step = 0.5 * h * (fp - fm) / (-denom)
                step = float(np.clip(step, -10.0 * h, 10.0 * h))
                cand = best_z.copy()
                cand[i] += step
                fc = objective(cand)
                n_evals += 1
                if np.isfinite(fc) and fc > best_f:
                    best_z, best_f, improved = cand, fc, True
            else:
                if np.isfinite(fp) and fp > best_f:
                    best_z, best_f, improved = zp, fp, True
                if np.isfinite(fm) and fm > best_f:
                    best_z, best_f, improved = zm, fm, True
        if not improved:
            break
    return best_z, best_f, {"n_evals": n_evals}


@dataclass
class StageProblem:
    """A likelihood-maximization stage: free parameters plus objectives.

    loglik maps a constrained parameter array to the total log-likelihood;
    per_date maps it to the vector of per-date contributions.
    """

    params: ParamVector
    init: np.ndarray
    loglik: Callable[[np.ndarray], float]
    per_date: Callable[[np.ndarray], np.ndarray] | None = None


def maximize_stage(problem: StageProblem, config: OptimizerConfig = OptimizerConfig()) -> EstimationResult:
    """Maximize one stage's likelihood over its transformed free parameters."""
    pv = problem.params
    z0 = pv.encode(problem.init)

    def objective(z: np.ndarray) -> float:
        try:
            val = problem.loglik(pv.decode(z))
        except (ValueError, np.linalg.LinAlgError, FloatingPointError):
            return -np.inf
        return val if np.isfinite(val) else -np.inf

    z_hat, f_hat, diag = maximize(objective, z0, config)
    return EstimationResult(
        names=pv.names,
        estimates=pv.decode(z_hat),
        loglik=f_hat,
        diagnostics=diag,
        seed=config.seed,
    )


def _fd_steps(z: np.ndarray, rel_step: float) -> np.ndarray:
    return rel_step * np.maximum(1.0, np.abs(z))


def sandwich_se(
    per_date: Callable[[np.ndarray], np.ndarray],
    z_hat: np.ndarray,
    rel_step: float = 1e-5,
) -> np.ndarray:
    """Robust covariance H^{-1} J H^{-1} from finite differences.

    per_date returns the vector of per-date log-likelihood contributions as
    a function of the (transformed-scale) parameter vector; J stacks outer
    products of per-date scores, H is the negative Hessian of the total.
    A singular H falls back to the pseudo-inverse with a warning.  The
    result is symmetrized and eigenvalue-floored at zero.
    """
    z_hat = np.asarray(z_hat, dtype=float)
    p = z_hat.size
    h = _fd_steps(z_hat, rel_step)
    base = np.asarray(per_date(z_hat), dtype=float)
    t_len = base.size

    plus = np.empty((p, t_len))
    minus = np.empty((p, t_len))
    for i in range(p):
        zp, zm = z_hat.copy(), z_hat.copy()
        zp[i] += h[i]
        zm[i] -= h[i]
        plus[i] = per_date(zp)
        minus[i] = per_date(zm)
    scores = (plus - minus) / (2.0 * h[:, None])  # (p, T)
    j_mat = scores @ scores.T

    hess = np.empty((p, p))
    f0 = base.sum()
    fp = plus.sum(axis=1)
    fm = minus.sum(axis=1)
    for i in range(p):
        hess[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / h[i] ** 2
        for k in range(i + 1, p):
            zpp = z_hat.copy(); zpp[[i, k]] += [h[i], h[k]]
            zpm = z_hat.copy(); zpm[i] += h[i]; zpm[k] -= h[k]
            zmp = z_hat.copy(); zmp[i] -= h[i]; zmp[k] += h[k]
            zmm = z_hat.copy(); zmm[[i, k]] -= [h[i], h[k]]
            val = (
                np.sum(per_date(zpp)) - np.sum(per_date(zpm)) - np.sum(per_date(zmp)) + np.sum(per_date(zmm))
            ) / (4.0 * h[i] * h[k])
            hess[i, k] = hess[k, i] = val
    neg_hess = -hess
    try:
        h_inv = np.linalg.inv(neg_hess)
    except np.linalg.LinAlgError:
        warnings.warn("Hessian is singular; using the pseudo-inverse", SingularHessianWarning, stacklevel=2)
        h_inv = np.linalg.pinv(neg_hess)
    cov = h_inv @ j_mat @ h_inv
    cov = 0.5 * (cov + cov.T)
    eigval, eigvec = np.linalg.eigh(cov)
    eigval = np.clip(eigval, 0.0, None)
    return eigvec @ np.diag(eigval) @ eigvec.T


def circular_block_indices(t_len: int, block_len: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of one circular block-bootstrap resample of length t_len."""
    if block_len >= t_len:
        return np.arange(t_len)
    n_blocks = int(np.ceil(t_len / block_len))
    starts = rng.integers(0, t_len, size=n_blocks)
    idx = (starts[:, None] + np.arange(block_len)[None, :]) % t_len
    return idx.ravel()[:t_len]


def block_bootstrap(
    t_len: int,
    estimate_fn: Callable[[np.ndarray], np.ndarray],
    block_len: int,
    reps: int,
    seed: int,
    min_success: float = 0.8,
) -> np.ndarray:
    """Covariance of re-estimates over circular block-bootstrap resamples.

    estimate_fn maps a date-index array to a parameter vector (typically a
    warm-started re-estimation).  A block covering the whole sample
    reproduces it, so block_len >= T gives identical replicates and a zero
    covariance.  Deterministic given the seed.
    """
    if block_len < 1:
        raise EstimationError("block length must be at least one week")
    if reps < 50:
        raise EstimationError("use at least 50 bootstrap replicates")
    estimates = []
    failures = 0
    for r in range(reps):
        rng = make_rng(seed, 7000 + r)
        idx = circular_block_indices(t_len, block_len, rng)
        try:
            est = np.asarray(estimate_fn(idx), dtype=float)
            if not np.all(np.isfinite(est)):
                raise EstimationError("non-finite replicate estimate")
            estimates.append(est)
        except Exception:
            failures += 1
    if len(estimates) < min_success * reps:
        raise TooFewSuccessfulReplicates(
            f"only {len(estimates)}/{reps} bootstrap replicates converged"
        )
    stacked = np.vstack(estimates)
    centered = stacked - stacked.mean(axis=0, keepdims=True)
    return centered.T @ centered / (stacked.shape[0] - 1 if stacked.shape[0] > 1 else 1)


def natural_se(pv: ParamVector, z_hat: np.ndarray, cov_z: np.ndarray) -> np.ndarray:
    """Delta-method standard errors on the natural parameter scale."""
    values = pv.decode(z_hat)
    grads = np.empty(len(pv))
    for i, spec in enumerate(pv.specs):
        if spec.transform == "log":
            grads[i] = values[i]
        elif spec.transform == "logit":
            grads[i] = values[i] * (1.0 - values[i])
        else:
            grads[i] = 1.0
    return np.sqrt(np.clip(np.diag(cov_z), 0.0, None)) * np.abs(grads)
