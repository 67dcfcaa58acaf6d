"""Continuous-time Markov chains for regime dynamics.

Regimes switch with time-homogeneous intensity matrices (nonnegative
off-diagonals, zero row sums).  Two independent chains compose through the
Kronecker sum, whose matrix exponential factorizes into the Kronecker
product of the marginal transition matrices.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.sparse.csgraph import connected_components

_ROWSUM_TOL = 1e-10
_STOCHASTIC_TOL = 1e-12


class GeneratorError(ValueError):
    pass


class ReducibleChain(GeneratorError):
    pass


def _frozen_array(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CtmcGenerator:
    """Intensity matrix of a continuous-time Markov chain with named states."""

    q: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        q = _frozen_array(self.q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "labels", tuple(self.labels))
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise GeneratorError(f"generator must be square, got shape {q.shape}")
        if len(self.labels) != q.shape[0]:
            raise GeneratorError("label count must match generator dimension")
        off = q.copy()
        np.fill_diagonal(off, 0.0)
        if np.any(off < -_ROWSUM_TOL):
            raise GeneratorError("off-diagonal intensities must be nonnegative")
        if np.any(np.abs(q.sum(axis=1)) > _ROWSUM_TOL * max(1.0, np.abs(q).max())):
            raise GeneratorError("generator rows must sum to zero")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic transition matrix over a fixed horizon in years."""

    p: np.ndarray
    horizon: float
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        p = _frozen_array(self.p)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.horizon < 0.0:
            raise GeneratorError("horizon must be nonnegative")
        if np.any(p < -_STOCHASTIC_TOL) or np.any(p > 1.0 + _STOCHASTIC_TOL):
            raise GeneratorError("transition probabilities must lie in [0, 1]")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > _STOCHASTIC_TOL):
            raise GeneratorError("transition matrix rows must sum to one")


def transition_matrix(g: CtmcGenerator, delta: float) -> TransitionMatrix:
    """exp(Q * delta), renormalized (with a warning) if row sums drift."""
    if delta < 0.0:
        raise GeneratorError("horizon must be nonnegative")
    p = expm(g.q * delta)
    p = np.clip(p, 0.0, None)
    rowsum = p.sum(axis=1)
    if np.any(np.abs(rowsum - 1.0) > _STOCHASTIC_TOL):
        warnings.warn(
            f"matrix exponential rows drifted from 1 by up to {np.abs(rowsum - 1.0).max():.3e}; renormalizing",
            RuntimeWarning,
            stacklevel=2,
        )
        p = p / rowsum[:, None]
    else:
        p = p / rowsum[:, None]
    return TransitionMatrix(p=p, horizon=delta, labels=g.labels)


def joint_label(rate_label: str, credit_label: str) -> str:
    return f"{rate_label}:{credit_label}"


def kronecker_sum(qr: CtmcGenerator, qc: CtmcGenerator) -> CtmcGenerator:
    """Generator of two independent chains evolving jointly.

    Q = Qr (x) I + I (x) Qc on the product state space, ordered with the
    first chain as the major index.
    """
    q = np.kron(qr.q, np.eye(qc.n)) + np.kron(np.eye(qr.n), qc.q)
    labels = tuple(joint_label(a, b) for a in qr.labels for b in qc.labels)
    return CtmcGenerator(q=q, labels=labels)


def stationary_distribution(g: CtmcGenerator) -> np.ndarray:
    """Probability vector pi with pi' Q = 0; requires an irreducible chain."""
    adj = (g.q > 0.0).astype(int)
    n_comp, _ = connected_components(adj, directed=True, connection="strong")
    if n_comp != 1:
        raise ReducibleChain("generator graph is not strongly connected")
    n = g.n
    a = np.vstack([g.q.T, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()
