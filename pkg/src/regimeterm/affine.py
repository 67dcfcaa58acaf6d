"""Closed-form exponential-affine transforms for generalized square-root diffusions.

A generalized CIR (GCIR) factor follows

    dx = kappa * (theta - x) dt + sqrt(alpha + beta * x) dW,

nesting classical CIR (alpha = 0) and the Gaussian mean-reverting case
(beta = 0).  The central object is the conditional Laplace-type transform

    E[ exp(-int_t^T c1 * x_u du - c2 * x_T) | x_t = x ] = exp(A(tau) - B(tau) x),

with tau = T - t, which prices discount bonds (c1 = 1, c2 = 0), propagates
exponential-affine continuation values (c2 = previous slope), and evaluates
default-mode kernels.  Note the sign convention: c2 multiplies -x_T in the
kernel, matching the terminal conditions A(0) = 0, B(0) = c2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

Measure = Literal["P", "Q"]

#: Below this beta the explicit A(tau) expression cancels catastrophically
#: (it divides by beta**2); switch to Gauss-Legendre integration of the exact
#: A-integrand evaluated on the closed-form B, which is stable for all beta.
SMALL_BETA = 1e-3

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


class AffineDomainError(ValueError):
    """Base class for inadmissible transform inputs."""


class NonPositiveQKappa(AffineDomainError):
    pass


class DegenerateInversion(AffineDomainError):
    pass


class InconsistentPair(AffineDomainError):
    pass


class ComplexGamma(AffineDomainError):
    pass


class SingularDenominator(AffineDomainError):
    pass


@dataclass(frozen=True)
class GcirParams:
    """Parameters of one square-root-diffusion factor under one regime.

    kappa is the mean-reversion speed (1/years), theta the long-run level,
    and (alpha, beta) the additive/proportional variance loadings.  The
    measure tag records whether the drift is physical or risk-neutral.
    """

    kappa: float
    theta: float
    alpha: float
    beta: float
    measure: Measure = "P"

    def __post_init__(self) -> None:
        if self.alpha < 0.0 or self.beta < 0.0:
            raise AffineDomainError(
                f"variance loadings must be nonnegative, got alpha={self.alpha}, beta={self.beta}"
            )
        if self.alpha + self.beta <= 0.0:
            raise AffineDomainError("diffusion is identically zero (alpha + beta must be > 0)")
        if self.measure == "Q" and self.kappa <= 0.0:
            raise NonPositiveQKappa(f"risk-neutral kappa must be positive, got {self.kappa}")

    def admissible_lower_bound(self) -> float:
        """Lowest state value with nonnegative instantaneous variance."""
        if self.beta > 0.0:
            return -self.alpha / self.beta
        return -np.inf


@dataclass(frozen=True)
class RiskPrice:
    """Market price of diffusion risk for one factor under one regime."""

    lam: float


@dataclass(frozen=True)
class AffineCoeffs:
    """Intercept/slope pair of the transform exp(a - b*x) at horizon tau."""

    a: float
    b: float
    tau: float
    c1: float
    c2: float


def to_risk_neutral(p: GcirParams, price: RiskPrice) -> GcirParams:
    """Map physical-measure parameters to risk-neutral ones.

    kappa' = kappa + beta*lambda and theta' = (kappa*theta - alpha*lambda)/kappa';
    the variance loadings are measure-invariant.
    """
    if p.measure != "P":
        raise AffineDomainError("to_risk_neutral expects physical-measure parameters")
    kq = p.kappa + p.beta * price.lam
    if kq <= 0.0:
        raise NonPositiveQKappa(
            f"kappa + beta*lambda = {kq} is not positive; no mean reversion under the pricing measure"
        )
    tq = (p.kappa * p.theta - p.alpha * price.lam) / kq
    return GcirParams(kappa=kq, theta=tq, alpha=p.alpha, beta=p.beta, measure="Q")


def implied_lambda(p_phys: GcirParams, p_rn: GcirParams, rtol: float = 1e-10) -> float:
    """Invert the measure mapping for the risk price lambda.

    Uses (kappa' - kappa)/beta when beta != 0 and (kappa*theta - kappa'*theta')/alpha
    when alpha != 0; when both apply the two values must agree within `rtol`.
    """
    lam_beta = None
    lam_alpha = None
    if p_phys.beta != 0.0:
        lam_beta = (p_rn.kappa - p_phys.kappa) / p_phys.beta
    if p_phys.alpha != 0.0:
        lam_alpha = (p_phys.kappa * p_phys.theta - p_rn.kappa * p_rn.theta) / p_phys.alpha
    if lam_beta is None and lam_alpha is None:
        raise DegenerateInversion("alpha = beta = 0 leaves lambda unidentified")
    if lam_beta is not None and lam_alpha is not None:
        scale = max(1.0, abs(lam_beta), abs(lam_alpha))
        if abs(lam_beta - lam_alpha) > rtol * scale:
            raise InconsistentPair(
                f"lambda from kappa mapping ({lam_beta}) and from theta mapping ({lam_alpha}) disagree"
            )
        return lam_beta
    return lam_beta if lam_beta is not None else lam_alpha


def affine_ab(kappa, theta, alpha, beta, c1, c2, tau):
    """Vectorized affine coefficients (A, B) of the GCIR transform.

    All arguments broadcast.  B is evaluated in a cancellation-free scaled
    form valid for every beta >= 0 (gamma - kappa is computed as
    2*beta*c1/(gamma + kappa)).  A uses the explicit expression when
    beta >= SMALL_BETA and composite Gauss-Legendre quadrature of

        A(tau) = int_0^tau (-kappa*theta*B(s) + alpha/2 * B(s)^2) ds

    otherwise.
    """
    kappa, theta, alpha, beta, c1, c2, tau = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (kappa, theta, alpha, beta, c1, c2, tau))
    )
    disc = kappa * kappa + 2.0 * beta * c1
    if np.any(disc <= 0.0):
        raise ComplexGamma("kappa^2 + 2*beta*c1 must be positive for a real exponent rate")
    g = np.sqrt(disc)
    gmk = 2.0 * beta * c1 / (g + kappa)  # gamma - kappa without cancellation
    q = g + kappa + beta * c2

    def b_at(s):
        u = np.exp(-g * s)
        den = 2.0 * g * u + q * (1.0 - u)
        return (2.0 * c1 * (1.0 - u) + gmk * c2 + (g + kappa) * c2 * u) / den, den

    b_tau, den_tau = b_at(tau)
    if np.any(den_tau <= 0.0):
        raise SingularDenominator("transform denominator vanished; horizon crosses an explosion time")

    a_out = np.empty_like(b_tau)
    explicit = beta >= SMALL_BETA
    if np.any(explicit):
        m = explicit
        u = np.exp(-g[m] * tau[m])
        den = 2.0 * g[m] * u + q[m] * (1.0 - u)
        mid = (
            -(alpha[m] / beta[m])
            * (2.0 * c1[m] - 2.0 * kappa[m] * c2[m] - beta[m] * c2[m] ** 2)
            * (1.0 - u)
            / den
        )
        log_term = np.log(2.0 * g[m] / den) + (kappa[m] - g[m]) * tau[m] / 2.0
        a_out[m] = (
            alpha[m] * c1[m] / beta[m] * tau[m]
            + mid
            + 2.0 * (beta[m] * theta[m] + alpha[m]) * kappa[m] / beta[m] ** 2 * log_term
        )
    if np.any(~explicit):
        m = ~explicit
        gt = g[m] * tau[m]
        n_panels = max(1, int(np.ceil(np.max(gt) / 2.0)), int(np.ceil(np.max(tau[m]) / 2.0)))
        # composite rule on a relative [0, 1] grid shared across entries
        edges = np.linspace(0.0, 1.0, n_panels + 1)
        acc = np.zeros(int(np.sum(m)))
        gm, km, tm, am, qm, c1m, c2m, gmkm, thm = (
            g[m], kappa[m], tau[m], alpha[m], q[m], c1[m], c2[m], gmk[m], theta[m],
        )
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid_t = 0.5 * (lo + hi) + 0.5 * (hi - lo) * _GL_NODES  # (n_nodes,)
            s = tm[:, None] * mid_t[None, :]
            u = np.exp(-gm[:, None] * s)
            den = 2.0 * gm[:, None] * u + qm[:, None] * (1.0 - u)
            bs = (
                2.0 * c1m[:, None] * (1.0 - u)
                + gmkm[:, None] * c2m[:, None]
                + (gm + km)[:, None] * c2m[:, None] * u
            ) / den
            f = -km[:, None] * thm[:, None] * bs + 0.5 * am[:, None] * bs * bs
            acc += 0.5 * (hi - lo) * (f @ _GL_WEIGHTS)
        a_out[m] = tm * acc
    return a_out, b_tau


def affine_coefficients(p: GcirParams, c1: float, c2: float, tau: float) -> AffineCoeffs:
    """Closed-form coefficients of exp(A - B x) for one factor at horizon tau."""
    if p.measure != "Q":
        raise AffineDomainError("pricing transforms require risk-neutral parameters")
    if tau < 0.0:
        raise AffineDomainError("horizon must be nonnegative")
    if tau == 0.0:
        return AffineCoeffs(a=0.0, b=float(c2), tau=0.0, c1=float(c1), c2=float(c2))
    a, b = affine_ab(p.kappa, p.theta, p.alpha, p.beta, c1, c2, tau)
    return AffineCoeffs(a=float(a), b=float(b), tau=float(tau), c1=float(c1), c2=float(c2))


def transform_value(coeffs: AffineCoeffs, x: float) -> float:
    """Evaluate exp(a - b*x); strictly positive."""
    return float(np.exp(coeffs.a - coeffs.b * x))


def riccati_oracle(p: GcirParams, c1, c2, tau, steps: int = 10_000):
    """Fixed-step RK4 integration of the Riccati system; verification oracle.

    Integrates dB/dtau = c1 - kappa*B - beta/2 B^2 and
    dA/dtau = -kappa*theta*B + alpha/2 B^2 from (A, B)(0) = (0, c2).
    Accepts scalars or broadcastable arrays for (c1, c2, tau); returns an
    AffineCoeffs for scalar input and an (A, B) array pair otherwise.
    """
    if steps < 100:
        raise ValueError("oracle needs at least 100 integration steps")
    c1a, c2a, taua = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (c1, c2, tau))
    )
    scalar = c1a.ndim == 0
    c1a = np.atleast_1d(c1a).astype(float)
    c2a = np.atleast_1d(c2a).astype(float)
    taua = np.atleast_1d(taua).astype(float)
    kap, th, al, be = p.kappa, p.theta, p.alpha, p.beta
    h = taua / steps
    a = np.zeros_like(taua)
    b = c2a.copy()

    def fb(bv):
        return c1a - kap * bv - 0.5 * be * bv * bv

    def fa(bv):
        return -kap * th * bv + 0.5 * al * bv * bv

    for _ in range(steps):
        k1b = fb(b)
        k2b = fb(b + 0.5 * h * k1b)
        k3b = fb(b + 0.5 * h * k2b)
        k4b = fb(b + h * k3b)
        k1a = fa(b)
        k2a = fa(b + 0.5 * h * k1b)
        k3a = fa(b + 0.5 * h * k2b)
        k4a = fa(b + h * k3b)
        b = b + h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        a = a + h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
    if scalar:
        return AffineCoeffs(
            a=float(a[0]), b=float(b[0]), tau=float(taua[0]), c1=float(c1a[0]), c2=float(c2a[0])
        )
    return a, b
