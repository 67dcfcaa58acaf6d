"""Rating-migration inputs for defaultable-bond pricing.

Pipeline: empirical fine-notch migration counts -> coarse one-year transition
matrix under the physical measure -> row-wise risk-neutral distortion
calibrated to spread-implied default probabilities -> continuous-time
generator via the matrix logarithm (with projection) -> default-intensity
adjustment -> spectral decomposition of the loss-adjusted non-default block,
whose eigenvalues and survival weights drive the pricing modes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import expm, logm
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

COARSE_BUCKETS = ("AAA", "AA+", "AA", "AA-", "SG", "D")
DEFAULT_LABEL = "D"

_EPS_PI = 1e-6
_WEIGHT_CLIP = 1e-10
_EIG_GAP = 1e-10


class RatingError(ValueError):
    pass


class EmptyRow(RatingError):
    pass


class EmptyBucket(RatingError):
    pass


class DegenerateRow(RatingError):
    pass


class OptimizerFailure(RatingError):
    pass


class NoRealLogarithm(RatingError):
    pass


class DefectiveMatrix(RatingError):
    pass


class ComplexSpectrum(RatingError):
    pass


class NegativeDeltaNu(RatingError):
    pass


class NegativeModeWeight(RatingError):
    pass


@dataclass(frozen=True)
class MigrationCounts:
    """Obligor counts N[i, j] over fine-notch ratings plus a coarse bucket map."""

    counts: np.ndarray
    fine_labels: tuple[str, ...]
    bucket_map: Mapping[str, str]

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=float)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "fine_labels", tuple(self.fine_labels))
        object.__setattr__(self, "bucket_map", dict(self.bucket_map))
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise RatingError("counts must be a square matrix")
        if counts.shape[0] != len(self.fine_labels):
            raise RatingError("fine label count must match the counts dimension")
        if np.any(counts < 0.0):
            raise RatingError("migration counts must be nonnegative")
        missing = [lbl for lbl in self.fine_labels if lbl not in self.bucket_map]
        if missing:
            raise RatingError(f"bucket map misses fine labels: {missing}")
        bad = [
            lbl
            for lbl, bucket in self.bucket_map.items()
            if (bucket == DEFAULT_LABEL) != self._is_default_fine(lbl)
        ]
        if bad:
            raise RatingError(f"default bucket may only hold default-tagged fine states: {bad}")

    @staticmethod
    def _is_default_fine(label: str) -> bool:
        return label.upper() in ("D", "DEFAULT")


@dataclass(frozen=True)
class RatingTransition:
    """K x K one-year rating transition matrix with an absorbing default row."""

    p: np.ndarray
    measure: str
    labels: tuple[str, ...] = COARSE_BUCKETS
    horizon: float = 1.0

    def __post_init__(self) -> None:
        p = np.array(self.p, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "labels", tuple(self.labels))
        k = len(self.labels)
        if p.shape != (k, k):
            raise RatingError(f"transition matrix shape {p.shape} does not match {k} labels")
        if self.labels[-1] != DEFAULT_LABEL:
            raise RatingError("last rating state must be the default state")
        if np.any(p < -1e-12) or np.any(p > 1.0 + 1e-12):
            raise RatingError("transition probabilities must lie in [0, 1]")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-12):
            raise RatingError("rows must sum to one (normalize rounded inputs first)")
        absorbing = np.zeros(k)
        absorbing[-1] = 1.0
        if np.any(np.abs(p[-1] - absorbing) > 1e-12):
            raise RatingError("default row must be absorbing")

    @property
    def k(self) -> int:
        return len(self.labels)

    @property
    def default_probs(self) -> np.ndarray:
        return self.p[:-1, -1].copy()


def normalize_rows(p, labels=COARSE_BUCKETS, measure: str = "P") -> RatingTransition:
    """Build a RatingTransition from possibly rounded rows (renormalized)."""
    p = np.array(p, dtype=float)
    k = p.shape[0]
    out = p.copy()
    for i in range(k - 1):
        s = p[i].sum()
        if s <= 0.0:
            raise EmptyRow(f"row {labels[i]} has no mass")
        out[i] = p[i] / s
    out[-1] = 0.0
    out[-1, -1] = 1.0
    return RatingTransition(p=out, measure=measure, labels=labels)


@dataclass(frozen=True)
class RatingGenerator:
    """Migration block and default-intensity vector of the rating generator.

    lambda_block is the (K-1) x (K-1) migration matrix with zero row sums;
    nu holds the default intensities.  The assembled K x K generator is
    [[lambda_block - diag(nu), nu], [0, 0]].
    """

    lambda_block: np.ndarray
    nu: np.ndarray
    labels: tuple[str, ...] = COARSE_BUCKETS

    def __post_init__(self) -> None:
        lam = np.array(self.lambda_block, dtype=float)
        nu = np.array(self.nu, dtype=float)
        lam.setflags(write=False)
        nu.setflags(write=False)
        object.__setattr__(self, "lambda_block", lam)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "labels", tuple(self.labels))
        k1 = len(self.labels) - 1
        if lam.shape != (k1, k1) or nu.shape != (k1,):
            raise RatingError("migration block / default vector dimensions are inconsistent")
        off = lam.copy()
        np.fill_diagonal(off, 0.0)
        if np.any(off < -1e-12):
            raise RatingError("migration intensities must be nonnegative")
        if np.any(nu < -1e-12):
            raise RatingError("default intensities must be nonnegative")
        if np.any(np.abs(lam.sum(axis=1)) > 1e-10):
            raise RatingError("migration block rows must sum to zero")

    @property
    def k(self) -> int:
        return len(self.labels)

    def loss_adjusted_block(self) -> np.ndarray:
        """Non-default block including default exit: Lambda - diag(nu)."""
        return self.lambda_block - np.diag(self.nu)

    def full_generator(self) -> np.ndarray:
        k1 = self.k - 1
        q = np.zeros((self.k, self.k))
        q[:k1, :k1] = self.loss_adjusted_block()
        q[:k1, -1] = self.nu
        return q


@dataclass(frozen=True)
class LandoDecomposition:
    """Eigensystem of the loss-adjusted non-default block with survival weights.

    modes_d holds the (negative, distinct, real) eigenvalues; eigvec_inv is
    the inverse eigenvector matrix with the default column appended as the
    negated row sums; weights[i, j] mixes mode j into rating i's survival:
    1 - P_default(i, t) = sum_j weights[i, j] * exp(modes_d[j] * t) for a
    unit intensity driver.
    """

    modes_d: np.ndarray
    eigvec: np.ndarray
    eigvec_inv: np.ndarray
    weights: np.ndarray
    labels: tuple[str, ...] = COARSE_BUCKETS

    def __post_init__(self) -> None:
        for name in ("modes_d", "eigvec", "eigvec_inv", "weights"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_modes(self) -> int:
        return self.modes_d.shape[0]


@dataclass(frozen=True)
class RatingModel:
    """Generator plus its decomposition, as consumed by the pricing layer."""

    generator: RatingGenerator
    decomposition: LandoDecomposition

    @property
    def labels(self) -> tuple[str, ...]:
        return self.generator.labels

    def rating_index(self, label: str) -> int:
        return self.generator.labels.index(label)


def fine_transition_probs(c: MigrationCounts) -> np.ndarray:
    """Row-normalized fine-notch probabilities with the default row absorbing."""
    n = c.counts.shape[0]
    p = np.zeros((n, n))
    for i, lbl in enumerate(c.fine_labels):
        if MigrationCounts._is_default_fine(lbl):
            p[i, i] = 1.0
            continue
        row_total = c.counts[i].sum()
        if row_total <= 0.0:
            raise EmptyRow(f"fine rating {lbl} has no observed transitions")
        p[i] = c.counts[i] / row_total
    return p


def aggregate_to_coarse(c: MigrationCounts, labels=COARSE_BUCKETS) -> RatingTransition:
    """Pool fine-notch counts by origin/destination bucket and row-normalize."""
    fine_transition_probs(c)  # validates occupied rows
    k = len(labels)
    idx = {lbl: j for j, lbl in enumerate(labels)}
    pooled = np.zeros((k, k))
    origin_total = np.zeros(k)
    for i, lbl_i in enumerate(c.fine_labels):
        bi = idx[c.bucket_map[lbl_i]]
        if MigrationCounts._is_default_fine(lbl_i):
            continue
        origin_total[bi] += c.counts[i].sum()
        for j, lbl_j in enumerate(c.fine_labels):
            pooled[bi, idx[c.bucket_map[lbl_j]]] += c.counts[i, j]
    p = np.zeros((k, k))
    for bi in range(k - 1):
        if origin_total[bi] <= 0.0:
            raise EmptyBucket(f"bucket {labels[bi]} has no origin mass")
        p[bi] = pooled[bi] / origin_total[bi]
        p[bi] /= p[bi].sum()
    p[-1, -1] = 1.0
    return RatingTransition(p=p, measure="P", labels=labels)


def spread_implied_default_prob(spread: float, horizon: float, recovery: float = 0.0) -> float:
    """Cumulative default probability implied by a matched-maturity spread.

    q = (1 - exp(-s*T)) / (1 - recovery), truncated to [0, 1].
    """
    if not 0.0 <= recovery < 1.0:
        raise RatingError("recovery must lie in [0, 1)")
    if horizon <= 0.0:
        raise RatingError("horizon must be positive")
    q = -np.expm1(-spread * horizon) / (1.0 - recovery)
    return float(np.clip(q, 0.0, 1.0))


def risk_neutral_distortion(p_phys: RatingTransition, pi: np.ndarray) -> RatingTransition:
    """Replace default probabilities with pi, rescaling non-default entries.

    The distortion preserves within-row proportions of non-default
    transitions and the absorbing default row.
    """
    if p_phys.measure != "P":
        raise RatingError("distortion starts from the physical-measure matrix")
    pi = np.asarray(pi, dtype=float)
    k = p_phys.k
    if pi.shape != (k - 1,):
        raise RatingError(f"pi must have length {k - 1}")
    if np.any(pi <= 0.0) or np.any(pi >= 1.0):
        raise RatingError("risk-neutral default probabilities must lie in (0, 1)")
    p = p_phys.p.copy()
    out = np.zeros_like(p)
    for i in range(k - 1):
        pd = p[i, -1]
        if pd >= 1.0:
            raise DegenerateRow(f"row {p_phys.labels[i]} already defaults with probability one")
        scale = (1.0 - pi[i]) / (1.0 - pd)
        out[i, :-1] = p[i, :-1] * scale
        out[i, -1] = pi[i]
        out[i] /= out[i].sum()
    out[-1, -1] = 1.0
    return RatingTransition(p=out, measure="Q", labels=p_phys.labels)


def calibrate_pi(
    p_phys: RatingTransition,
    q_implied: np.ndarray,
    weights: np.ndarray | None = None,
    t_max: int | None = None,
    seed: int = 0,
    restarts: int = 3,
) -> np.ndarray:
    """Least-squares fit of one-year risk-neutral default probabilities.

    Matches the default column of powers of the distorted matrix to
    spread-implied cumulative default probabilities on integer-year
    horizons 1..t_max.  pi is optimized on a logit scale constrained to
    (1e-6, 1 - 1e-6); the single-horizon case is solved exactly.
    """
    q_implied = np.atleast_2d(np.asarray(q_implied, dtype=float))
    k1 = p_phys.k - 1
    if q_implied.shape[0] != k1:
        raise RatingError(f"q_implied must have {k1} rows (one per non-default rating)")
    if t_max is None:
        t_max = q_implied.shape[1]
    if t_max < 1 or t_max > q_implied.shape[1]:
        raise RatingError("t_max must be between 1 and the number of horizon columns")
    if np.any(q_implied < 0.0) or np.any(q_implied > 1.0):
        raise RatingError("implied default probabilities must lie in [0, 1]")
    if weights is None:
        weights = np.ones((k1, t_max))
    weights = np.asarray(weights, dtype=float)[:, :t_max]
    if np.any(weights < 0.0):
        raise RatingError("weights must be nonnegative")

    if t_max == 1:
        # the one-year power is the distorted matrix itself, so the objective
        # separates by rating and is solved by clamping the implied value
        pi = q_implied[:, 0].copy()
        zero_w = weights[:, 0] <= 0.0
        pi[zero_w] = np.clip(p_phys.default_probs[zero_w], _EPS_PI, 1.0 - _EPS_PI)
        return np.clip(pi, _EPS_PI, 1.0 - _EPS_PI)

    def objective(z: np.ndarray) -> float:
        pi = 1.0 / (1.0 + np.exp(-np.clip(z, -40.0, 40.0)))
        pi = np.clip(pi, _EPS_PI, 1.0 - _EPS_PI)
        pq = risk_neutral_distortion(p_phys, pi).p
        power = np.eye(p_phys.k)
        val = 0.0
        for t in range(1, t_max + 1):
            power = power @ pq
            resid = power[:-1, -1] - q_implied[:, t - 1]
            val += float(np.sum(weights[:, t - 1] * resid * resid))
        return val

    def logit(p):
        p = np.clip(p, _EPS_PI, 1.0 - _EPS_PI)
        return np.log(p / (1.0 - p))

    rng = np.random.default_rng(seed)
    start = logit(np.clip(p_phys.default_probs, _EPS_PI, 1.0 - _EPS_PI))
    best_z, best_f = start, objective(start)
    for r in range(restarts):
        z0 = start if r == 0 else start + rng.normal(0.0, 1.0, size=k1)
        res = minimize(
            objective,
            z0,
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 20_000, "maxfev": 20_000},
        )
        if res.fun < best_f:
            best_z, best_f = res.x, res.fun
    if not np.isfinite(best_f) or best_f > objective(start) + 1e-12:
        raise OptimizerFailure("no descent from the physical default probabilities")
    return np.clip(1.0 / (1.0 + np.exp(-np.clip(best_z, -40.0, 40.0))), _EPS_PI, 1.0 - _EPS_PI)


def embed_generator(p_rn: RatingTransition) -> RatingGenerator:
    """Principal matrix logarithm of the one-year matrix, projected to a generator.

    Projection zeroes negative off-diagonal intensities and resets diagonals
    so full rows sum to zero; the reconstruction error exp(G) vs the input is
    logged as a diagnostic.
    """
    p = p_rn.p
    if np.any(np.diag(p)[:-1] <= 0.0):
        raise NoRealLogarithm("transition matrix needs a strictly positive diagonal")
    eig = np.linalg.eigvals(p)
    on_negative_axis = (eig.real <= 0.0) & (np.abs(eig.imag) <= 1e-12)
    if np.any(on_negative_axis):
        raise NoRealLogarithm("eigenvalues on the closed negative real axis; no principal logarithm")
    g = logm(p)
    if np.abs(g.imag).max() > 1e-8:
        raise NoRealLogarithm("matrix logarithm has a material imaginary part")
    g = g.real
    k = p_rn.k
    g[-1, :] = 0.0
    projected = g.copy()
    for i in range(k - 1):
        for j in range(k):
            if i != j and projected[i, j] < 0.0:
                projected[i, j] = 0.0
        projected[i, i] = 0.0
        projected[i, i] = -projected[i].sum()
    recon_err = float(np.abs(expm(projected) - p).max())
    logger.info("generator embedding reconstruction error (max abs): %.3e", recon_err)

    nu = projected[:-1, -1].copy()
    lam = projected[:-1, :-1].copy()
    for i in range(k - 1):
        lam[i, i] = 0.0
        lam[i, i] = -lam[i].sum()
    return RatingGenerator(lambda_block=lam, nu=nu, labels=p_rn.labels)


def adjust_default_intensity(g: RatingGenerator, delta_nu: np.ndarray) -> RatingGenerator:
    """Shift default intensities by delta_nu >= 0, leaving migrations untouched."""
    delta_nu = np.asarray(delta_nu, dtype=float)
    if delta_nu.shape != g.nu.shape:
        raise RatingError("delta_nu length must match the number of non-default ratings")
    if np.any(delta_nu < 0.0):
        raise NegativeDeltaNu("default-intensity adjustments must be nonnegative")
    return RatingGenerator(lambda_block=g.lambda_block, nu=g.nu + delta_nu, labels=g.labels)


def lando_decomposition(
    g: RatingGenerator, *, require_nonnegative_weights: bool = False
) -> LandoDecomposition:
    """Eigendecomposition of the loss-adjusted block with survival weights.

    Weights follow w[i, j] = -B[i, j] * Binv[j, default]; rows sum to one by
    construction.  Signed weights are legitimate (the survival identity
    1 - P_default(i, t) = sum_j w[i, j] exp(d_j t) is exact either way, and
    a rating whose hazard undercuts the slowest decay mode necessarily
    carries a negative fast-mode weight).  `require_nonnegative_weights`
    enables the strict mode: weights in [-1e-10, 0) are clipped and the row
    renormalized, anything lower is rejected.
    """
    block = g.loss_adjusted_block()
    eigval, eigvec = np.linalg.eig(block)
    if np.abs(eigval.imag).max() > 1e-12:
        raise ComplexSpectrum("loss-adjusted block has complex eigenvalues")
    eigval = eigval.real
    eigvec = eigvec.real
    order = np.argsort(eigval)[::-1]
    eigval = eigval[order]
    eigvec = eigvec[:, order]
    if np.any(eigval >= 0.0):
        raise DefectiveMatrix("loss-adjusted block must have strictly negative eigenvalues")
    gaps = np.abs(np.diff(np.sort(eigval)))
    if gaps.size and gaps.min() <= _EIG_GAP:
        raise DefectiveMatrix("eigenvalues are not separated; decomposition is unreliable")
    # deterministic eigenvector normalization: unit max-abs entry, positive sign
    for j in range(eigvec.shape[1]):
        pivot = np.argmax(np.abs(eigvec[:, j]))
        eigvec[:, j] = eigvec[:, j] / eigvec[pivot, j]
    inv = np.linalg.inv(eigvec)
    recon = eigvec @ np.diag(eigval) @ inv
    if np.abs(recon - block).max() > 1e-8:
        raise DefectiveMatrix("eigendecomposition does not reconstruct the block")

    default_col = -inv.sum(axis=1)
    weights = -(eigvec * default_col[None, :])
    if require_nonnegative_weights:
        if weights.min() < -_WEIGHT_CLIP:
            raise NegativeModeWeight(
                f"mode weight {weights.min():.3e} below tolerance; generator violates the "
                "monotone-migration restrictions that guarantee nonnegative survival weights"
            )
        weights = np.clip(weights, 0.0, None)
        weights = weights / weights.sum(axis=1, keepdims=True)
    inv_with_default = np.hstack([inv, default_col[:, None]])
    return LandoDecomposition(
        modes_d=eigval,
        eigvec=eigvec,
        eigvec_inv=inv_with_default,
        weights=weights,
        labels=g.labels,
    )


def rating_model(g: RatingGenerator, **kwargs) -> RatingModel:
    return RatingModel(generator=g, decomposition=lando_decomposition(g, **kwargs))


def survival_curve(decomp: LandoDecomposition, t) -> np.ndarray:
    """Spectral survival probabilities per rating for a unit intensity driver."""
    t = np.asarray(t, dtype=float)
    return decomp.weights @ np.exp(decomp.modes_d[:, None] * t[None, :])
