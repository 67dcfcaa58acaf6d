import numpy as np
import pytest

from regimeterm.estimation import (
    EstimationError,
    OptimizerConfig,
    ParamSpec,
    ParamVector,
    StageProblem,
    TooFewSuccessfulReplicates,
    block_bootstrap,
    circular_block_indices,
    maximize,
    maximize_stage,
    natural_se,
    sandwich_se,
)
from regimeterm.simulate import make_rng


class TestParamVector:
    def test_roundtrip_exact(self):
        pv = ParamVector(
            [ParamSpec("a", "log"), ParamSpec("b", "logit"), ParamSpec("c", "identity")]
        )
        values = np.array([0.37, 0.82, -4.1])
        back = pv.decode(pv.encode(values))
        assert np.abs(back - values).max() < 1e-12

    def test_duplicate_names_rejected(self):
        with pytest.raises(EstimationError):
            ParamVector([ParamSpec("a"), ParamSpec("a")])

    def test_unknown_transform_rejected(self):
        with pytest.raises(EstimationError):
            ParamSpec("a", "sqrt")


class TestMaximize:
    def test_quadratic_optimum(self):
        target = np.array([0.3, -1.2, 2.0])

        def objective(z):
            return -np.sum((z - target) ** 2)

        z_hat, f_hat, _ = maximize(objective, np.zeros(3), OptimizerConfig(starts=2, seed=1))
        assert np.abs(z_hat - target).max() < 1e-6
        assert f_hat <= 0.0

    def test_never_below_start(self):
        rng = np.random.default_rng(3)

        def rugged(z):
            return -np.sum(z**2) + 0.01 * np.sin(40 * z).sum()

        z0 = rng.normal(size=4)
        _, f_hat, _ = maximize(rugged, z0, OptimizerConfig(starts=3, seed=2))
        assert f_hat >= rugged(z0)

    def test_nonfinite_start_rejected(self):
        with pytest.raises(Exception):
            maximize(lambda z: np.nan, np.zeros(2))


class TestMaximizeStage:
    def test_known_constrained_optimum(self):
        pv = ParamVector([ParamSpec("kappa", "log"), ParamSpec("w", "logit")])
        target = np.array([0.7, 0.25])

        def loglik(values):
            return -np.sum((values - target) ** 2)

        problem = StageProblem(params=pv, init=np.array([0.3, 0.6]), loglik=loglik)
        result = maximize_stage(problem, OptimizerConfig(starts=2, seed=0))
        assert np.abs(result.estimates - target).max() < 1e-5
        assert result.loglik == pytest.approx(0.0, abs=1e-9)


class TestSandwich:
    def test_iid_gaussian_mean_matches_analytic(self):
        rng = make_rng(1, 0)
        sigma = 0.8
        t_len = 1000
        y = rng.normal(0.5, sigma, size=t_len)

        def per_date(z):
            mu = z[0]
            return -0.5 * np.log(2 * np.pi * sigma**2) - 0.5 * (y - mu) ** 2 / sigma**2

        mu_hat = np.array([y.mean()])
        cov = sandwich_se(per_date, mu_hat)
        assert cov[0, 0] == pytest.approx(sigma**2 / t_len, rel=0.05)

    def test_information_equality_when_well_specified(self):
        rng = make_rng(2, 0)
        t_len = 2000
        y = rng.normal(1.2, 0.5, size=t_len)

        def per_date(z):
            mu, log_sd = z
            sd = np.exp(log_sd)
            return -0.5 * np.log(2 * np.pi) - log_sd - 0.5 * (y - mu) ** 2 / sd**2

        z_hat = np.array([y.mean(), np.log(y.std())])
        cov_sandwich = sandwich_se(per_date, z_hat)
        # inverse Hessian alone
        h = 1e-5 * np.maximum(1.0, np.abs(z_hat))
        hess = np.zeros((2, 2))
        f0 = per_date(z_hat).sum()
        for i in range(2):
            zp, zm = z_hat.copy(), z_hat.copy()
            zp[i] += h[i]
            zm[i] -= h[i]
            hess[i, i] = (per_date(zp).sum() - 2 * f0 + per_date(zm).sum()) / h[i] ** 2
        zpp = z_hat + h
        zmm = z_hat - h
        zpm = z_hat + np.array([h[0], -h[1]])
        zmp = z_hat + np.array([-h[0], h[1]])
        hess[0, 1] = hess[1, 0] = (
            per_date(zpp).sum() - per_date(zpm).sum() - per_date(zmp).sum() + per_date(zmm).sum()
        ) / (4 * h[0] * h[1])
        h_inv = np.linalg.inv(-hess)
        ratio = np.diag(cov_sandwich) / np.diag(h_inv)
        assert np.all(np.abs(ratio - 1.0) < 0.3)

    def test_output_symmetric_psd(self):
        rng = make_rng(3, 0)
        y = rng.normal(size=200)

        def per_date(z):
            return -0.5 * (y - z[0]) ** 2 - 0.1 * z[1] ** 2 / len(y) * np.ones_like(y)

        cov = sandwich_se(per_date, np.array([0.0, 0.3]))
        assert np.abs(cov - cov.T).max() == 0.0
        assert np.linalg.eigvalsh(cov).min() >= 0.0


class TestBlockBootstrap:
    def test_full_length_block_is_degenerate(self):
        rng = make_rng(4, 0)
        y = rng.normal(size=120)
        cov = block_bootstrap(120, lambda idx: np.array([y[idx].mean()]), block_len=120,
                              reps=60, seed=5)
        assert cov[0, 0] < 1e-30  # identical replicates up to summation dust

    def test_iid_unit_blocks_match_analytic_variance(self):
        rng = make_rng(5, 0)
        t_len = 400
        y = rng.normal(0.0, 1.0, size=t_len)
        cov = block_bootstrap(t_len, lambda idx: np.array([y[idx].mean()]), block_len=1,
                              reps=400, seed=6)
        assert cov[0, 0] == pytest.approx(y.var() / t_len, rel=0.3)

    def test_deterministic_given_seed(self):
        rng = make_rng(6, 0)
        y = rng.normal(size=90)
        est = lambda idx: np.array([y[idx].mean(), y[idx].std()])
        c1 = block_bootstrap(90, est, block_len=5, reps=80, seed=7)
        c2 = block_bootstrap(90, est, block_len=5, reps=80, seed=7)
        assert np.array_equal(c1, c2)

    def test_too_few_replicates(self):
        def flaky(idx):
            raise ValueError("no convergence")

        with pytest.raises(TooFewSuccessfulReplicates):
            block_bootstrap(50, flaky, block_len=5, reps=60, seed=8)

    def test_indices_cover_sample_length(self):
        rng = make_rng(9, 0)
        idx = circular_block_indices(101, 13, rng)
        assert idx.shape == (101,)
        assert idx.min() >= 0 and idx.max() < 101


class TestNaturalSe:
    def test_delta_method_scaling(self):
        pv = ParamVector([ParamSpec("a", "log"), ParamSpec("p", "logit"), ParamSpec("c")])
        values = np.array([2.0, 0.25, -1.0])
        z = pv.encode(values)
        cov_z = np.diag([0.04, 0.09, 0.01])
        se = natural_se(pv, z, cov_z)
        assert se[0] == pytest.approx(0.2 * 2.0)
        assert se[1] == pytest.approx(0.3 * 0.25 * 0.75)
        assert se[2] == pytest.approx(0.1)


@pytest.mark.slow
class TestParameterRecovery:
    def test_single_regime_cir_panel(self):
        """Low-noise single-regime panel: kappa/theta within 20%, beta within 50%."""
        from regimeterm.config import build_model
        from regimeterm.pipeline import rate_stage_problem
        from regimeterm.simulate import simulate_panel

        true = {"kappa": 0.6, "theta": 0.035, "beta": 4e-4}
        cfg = {
            "seed": 0,
            "grid": {"delta_weeks": 1, "maturities": [1, 3, 7]},
            "model": {
                "rate_regimes": ["S"],
                "credit_regimes": ["E"],
                "rate_chain": [[0.0]],
                "credit_chain": [[0.0]],
                "factors": {
                    "x1": {"S": {"kappa": true["kappa"], "theta": true["theta"],
                                 "alpha": 1e-6, "beta": true["beta"], "lambda": 0.0}},
                    "x2": {"S": {"kappa": 1.0, "theta": 1e-4, "alpha": 1e-8, "beta": 1e-6,
                                 "lambda": 0.0}},
                    "x3": {"S": {"kappa": 1.0, "theta": 1e-4, "alpha": 1e-8, "beta": 1e-6,
                                 "lambda": 0.0}},
                    "x4": {"E": {"kappa": 0.5, "theta": 0.02, "alpha": 1e-4, "beta": 1e-3,
                                 "lambda": 0.0}},
                },
                "passthrough": [[0.0]],
                "noise": {"rate": {"S": {"CGB": 0.0003, "CDB": 0.0003}}, "credit": {"E": 0.001}},
            },
            "estimate_rates": {
                "free": ["model.factors.x1.S.kappa", "model.factors.x1.S.theta",
                         "model.factors.x1.S.beta"],
                "order_theta": False,
            },
        }
        model = build_model(cfg)
        panel = simulate_panel(model, weeks=2000, seed=77, include_credit=False)
        y = np.hstack([panel.rate_yields["CGB"], panel.rate_yields["CDB"]])
        # start away from the truth
        start_cfg = dict(cfg)
        import copy

        start_cfg = copy.deepcopy(cfg)
        start_cfg["model"]["factors"]["x1"]["S"].update(kappa=1.0, theta=0.02, beta=2e-4)
        stage = rate_stage_problem(start_cfg, y)
        result = maximize_stage(
            stage.problem, OptimizerConfig(starts=2, max_iter=400, seed=1, perturb=0.2)
        )
        est = result.as_dict()
        assert abs(est["model.factors.x1.S.kappa"] - true["kappa"]) / true["kappa"] < 0.2
        assert abs(est["model.factors.x1.S.theta"] - true["theta"]) / true["theta"] < 0.2
        assert abs(est["model.factors.x1.S.beta"] - true["beta"]) / true["beta"] < 0.5
        # fitted likelihood at least matches the generator's
        truth_ll = stage.problem.loglik(
            np.array([true["kappa"], true["theta"], true["beta"]])
        )
        assert result.loglik >= truth_ll - 2.0
