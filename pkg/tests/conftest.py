"""Shared fixtures: the published one-year risk-neutral rating matrix, toy
rating generators, and small regime-switching model specs."""

from __future__ import annotations

import numpy as np
import pytest

from regimeterm.affine import GcirParams
from regimeterm.model import FactorDynamics, FullModel
from regimeterm.pricing import ModelSpec
from regimeterm.ratings import RatingGenerator, rating_model
from regimeterm.regimes import CtmcGenerator

# One-year risk-neutral transition matrix over the coarse buckets
# {AAA, AA+, AA, AA-, SG, D}; rows sum to one up to published rounding.
TABLE_Q_MATRIX = np.array(
    [
        [0.9978, 0.0000, 0.0000, 0.0000, 0.0000, 0.0022],
        [0.0064, 0.9719, 0.0174, 0.0013, 0.0002, 0.0028],
        [0.0000, 0.0060, 0.9717, 0.0187, 0.0002, 0.0034],
        [0.0000, 0.0007, 0.0071, 0.9798, 0.0033, 0.0091],
        [0.0000, 0.0000, 0.0064, 0.0208, 0.8935, 0.0792],
        [0.0000, 0.0000, 0.0000, 0.0000, 0.0000, 1.0000],
    ]
)

# Default-intensity adjustment vector from the fitted model (per rating).
DELTA_NU = np.array([0.000220, 5.36e-6, 0.000105, 0.000257, 0.016223])

# Pass-through estimates {c(E|H), c(E|L), c(C|H), c(C|L)} from the fitted model.
PASS_THROUGH = {"EH": 3.1592, "EL": -0.2821, "CH": -0.1052, "CL": 0.6013}


def qparams(kappa, theta, alpha, beta):
    return GcirParams(kappa=kappa, theta=theta, alpha=alpha, beta=beta, measure="Q")


def pparams(kappa, theta, alpha, beta):
    return GcirParams(kappa=kappa, theta=theta, alpha=alpha, beta=beta, measure="P")


@pytest.fixture(scope="session")
def table_q_matrix():
    return TABLE_Q_MATRIX.copy()


@pytest.fixture(scope="session")
def toy_rating_model():
    """Two non-default ratings plus default; signed weights are expected."""
    lam = np.array([[-0.1, 0.1], [0.15, -0.15]])
    nu = np.array([0.01, 0.05])
    return rating_model(RatingGenerator(lambda_block=lam, nu=nu, labels=("A", "B", "D")))


@pytest.fixture(scope="session")
def rate_chain():
    return CtmcGenerator(q=[[-0.35, 0.35], [0.45, -0.45]], labels=("L", "H"))


@pytest.fixture(scope="session")
def credit_chain():
    return CtmcGenerator(q=[[-0.5, 0.5], [0.7, -0.7]], labels=("E", "C"))


@pytest.fixture(scope="session")
def degenerate_spec(rate_chain, credit_chain, toy_rating_model):
    """Identical parameters in both regimes: prices must collapse."""
    f1 = qparams(0.5, 0.05, 0.01, 0.02)
    f2 = qparams(0.9, 0.01, 0.002, 0.01)
    f3 = qparams(1.1, 0.002, 0.0005, 0.004)
    f4 = qparams(0.5, 0.03, 0.02, 0.05)
    return ModelSpec(
        rate_factors=({"L": f1, "H": f1}, {"L": f2, "H": f2}, {"L": f3, "H": f3}),
        credit_factor={"E": f4, "C": f4},
        rate_chain=rate_chain,
        credit_chain=credit_chain,
        passthrough=np.full((2, 2), 0.5),
        rating=toy_rating_model,
    )


@pytest.fixture(scope="session")
def switching_spec(rate_chain, credit_chain, toy_rating_model):
    """Genuinely regime-dependent pricing model."""
    return ModelSpec(
        rate_factors=(
            {"L": qparams(0.8, 0.020, 1e-4, 2e-4), "H": qparams(1.4, 0.035, 1.3e-4, 1.3e-4)},
            {"L": qparams(0.3, 0.012, 2e-5, 5e-4), "H": qparams(0.6, 0.018, 8e-5, 3e-4)},
            {"L": qparams(0.6, 0.004, 3e-5, 1e-3), "H": qparams(1.0, 0.006, 3e-5, 1e-3)},
        ),
        credit_factor={"E": qparams(0.48, 0.015, 1e-4, 1e-3), "C": qparams(0.43, 0.025, 1.2e-4, 9e-4)},
        rate_chain=rate_chain,
        credit_chain=credit_chain,
        passthrough=np.array([[0.8, 0.3], [1.2, 0.6]]),
        rating=toy_rating_model,
    )


@pytest.fixture(scope="session")
def small_model(rate_chain, credit_chain, toy_rating_model):
    """Physical-measure model used by filter and simulation tests."""
    return FullModel(
        rate_factors=(
            FactorDynamics(
                {"L": pparams(0.9, 0.012, 1.2e-4, 1.2e-4), "H": pparams(1.4, 0.03, 1.3e-4, 1.3e-4)},
                {"L": -5.0, "H": -8.0},
            ),
            FactorDynamics(
                {"L": pparams(0.25, 0.010, 2e-5, 5e-4), "H": pparams(0.20, 0.016, 8e-5, 3.6e-4)},
                {"L": -3.0, "H": -4.0},
            ),
            FactorDynamics(
                {"L": pparams(0.35, 0.0035, 3e-5, 9e-4), "H": pparams(1.0, 0.004, 3e-5, 2e-3)},
                {"L": -0.05, "H": -0.1},
            ),
        ),
        credit_factor=FactorDynamics(
            {"E": pparams(0.48, 0.012, 1e-4, 1e-3), "C": pparams(0.43, 0.022, 1.2e-4, 9e-4)},
            {"E": -2.0, "C": -1.5},
        ),
        rate_chain=rate_chain,
        credit_chain=credit_chain,
        passthrough=np.array([[0.8, 0.3], [1.2, 0.6]]),
        rating=toy_rating_model,
        maturities=(1.0, 2.0, 3.0, 5.0, 7.0, 10.0),
        rate_noise_sd={"L": {"CGB": 0.0008, "CDB": 0.0008}, "H": {"CGB": 0.0010, "CDB": 0.0010}},
        credit_noise_sd={"E": 0.0012, "C": 0.0015},
        observed_ratings=("A", "B"),
    )
