import itertools

import numpy as np
import pytest

from regimeterm.affine import GcirParams
from regimeterm.filters import (
    FilterError,
    GaussianBelief,
    GcirTransition,
    LinearTransition,
    RegimeBeliefs,
    UtParams,
    credit_block_filter,
    gcir_step_moments,
    gray_collapse,
    rate_block_filter,
    rs_ukf_step,
    sigma_points,
    ukf_step,
)
from regimeterm.model import FullModel
from regimeterm.simulate import make_rng, simulate_panel

# regression pin for the collapse approximation on the tiny linear toy below;
# the exact mixture enumerates every regime path with exact Kalman sub-filters
GRAY_GAP_GOLDEN = -0.850179721788560


class TestSigmaPoints:
    def test_zero_covariance_collapses_points(self):
        b = GaussianBelief(mean=[1.0, -2.0], cov=np.zeros((2, 2)))
        sp = sigma_points(b)
        assert np.allclose(sp.points, [1.0, -2.0])

    def test_mean_reconstruction(self):
        b = GaussianBelief(mean=[0.3, 0.7, -0.2], cov=np.diag([0.1, 0.4, 0.2]))
        sp = sigma_points(b)
        assert np.abs(sp.mean_weights @ sp.points - b.mean).max() < 1e-12

    def test_covariance_reconstruction(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 3))
        cov = a @ a.T + 0.1 * np.eye(3)
        b = GaussianBelief(mean=np.zeros(3), cov=cov)
        sp = sigma_points(b)
        dev = sp.points - b.mean
        recon = (dev * sp.cov_weights[:, None]).T @ dev
        assert np.abs(recon - cov).max() < 1e-10

    def test_unit_scalar_case(self):
        # alpha=1, kappa=0, beta=2 on N(0, 1) puts points at (0, 1, -1)
        sp = sigma_points(GaussianBelief(mean=[0.0], cov=[[1.0]]), UtParams(alpha=1.0))
        assert np.allclose(sorted(sp.points[:, 0]), [-1.0, 0.0, 1.0])


class TestStepMoments:
    def p(self, **kw):
        base = dict(kappa=0.8, theta=0.03, alpha=0.0, beta=0.02, measure="P")
        base.update(kw)
        return GcirParams(**base)

    def test_zero_horizon(self):
        m, v = gcir_step_moments(self.p(), 0.07, 0.0)
        assert m == 0.07 and v == 0.0

    def test_strong_reversion_pins_theta(self):
        m, _ = gcir_step_moments(self.p(kappa=50.0 * 52), 0.10, 1.0 / 52.0)
        assert m == pytest.approx(0.03, abs=1e-10)

    def test_classical_conditional_variance(self):
        kappa, theta, beta, delta, x = 0.8, 0.03, 0.02, 1.0 / 52.0, 0.05
        _, v = gcir_step_moments(self.p(), x, delta)
        e1, e2 = np.exp(-kappa * delta), np.exp(-2 * kappa * delta)
        ref = x * (beta / kappa) * (e1 - e2) + theta * (beta / (2 * kappa)) * (1 - e1) ** 2
        assert v == pytest.approx(ref, rel=1e-12)

    def test_variance_matches_euler_simulation(self):
        p = self.p(alpha=0.001, beta=0.05, kappa=1.2, theta=0.04)
        x0, delta = 0.05, 1.0 / 52.0
        n_paths, n_sub = 1_000_000, 64
        rng = make_rng(99, 0)
        dt = delta / n_sub
        x = np.full(n_paths, x0)
        for _ in range(n_sub):
            var = np.maximum(p.alpha + p.beta * x, 0.0)
            x = x + p.kappa * (p.theta - x) * dt + np.sqrt(var * dt) * rng.standard_normal(n_paths)
        m_ref, v_ref = gcir_step_moments(p, x0, delta)
        se_mean = x.std() / np.sqrt(n_paths)
        assert abs(x.mean() - m_ref) < 3 * se_mean
        se_var = x.var() * np.sqrt(2.0 / n_paths)
        assert abs(x.var() - v_ref) < 3 * se_var + 1e-9


def linear_setup():
    d, m = 3, 2
    f_mat = np.array([[0.9, 0.1, 0.0], [0.0, 0.8, 0.05], [0.02, 0.0, 0.7]])
    q_mat = 0.01 * np.eye(d)
    h_mat = np.array([[1.0, 0.5, -0.2], [0.3, -1.0, 0.8]])
    r_mat = np.diag([0.04, 0.09])
    shift = np.array([0.01, -0.02, 0.005])
    return f_mat, q_mat, h_mat, r_mat, shift


def exact_kf(mean, cov, y, f_mat, q_mat, h_mat, r_mat, shift):
    xp = f_mat @ mean + shift
    pp = f_mat @ cov @ f_mat.T + q_mat
    mask = np.isfinite(y)
    hm, rm, ym = h_mat[mask], r_mat[np.ix_(mask, mask)], y[mask]
    s = hm @ pp @ hm.T + rm
    k = pp @ hm.T @ np.linalg.inv(s)
    innov = ym - hm @ xp
    ll = -0.5 * (
        len(ym) * np.log(2 * np.pi) + np.log(np.linalg.det(s)) + innov @ np.linalg.solve(s, innov)
    )
    return xp + k @ innov, pp - k @ s @ k.T, ll


class TestUkfStep:
    def test_exact_on_linear_gaussian(self):
        f_mat, q_mat, h_mat, r_mat, shift = linear_setup()
        trans = LinearTransition(f_mat, q_mat, shift)
        meas = lambda pts: pts @ h_mat.T
        rng = np.random.default_rng(5)
        b = GaussianBelief(mean=[0.1, -0.2, 0.3], cov=0.5 * np.eye(3))
        mean, cov = b.mean.copy(), b.cov.copy()
        for t in range(25):
            y = rng.normal(size=2)
            if t == 9:
                y[1] = np.nan
            res = ukf_step(b, y, trans, meas, r_mat)
            mean, cov, ll = exact_kf(mean, cov, y, f_mat, q_mat, h_mat, r_mat, shift)
            assert np.abs(res.belief.mean - mean).max() < 1e-10
            assert np.abs(res.belief.cov - cov).max() < 1e-10
            assert abs(res.loglik - ll) < 1e-10
            b = res.belief

    def test_fully_missing_keeps_prediction(self):
        f_mat, q_mat, h_mat, r_mat, shift = linear_setup()
        trans = LinearTransition(f_mat, q_mat, shift)
        b = GaussianBelief(mean=[0.1, -0.2, 0.3], cov=0.5 * np.eye(3))
        res = ukf_step(b, np.array([np.nan, np.nan]), trans, lambda pts: pts @ h_mat.T, r_mat)
        assert res.loglik == 0.0
        assert res.innovation is None
        assert np.array_equal(res.belief.mean, res.predicted.mean)

    def test_precise_observation_pins_linear_functional(self):
        f_mat, q_mat, _, _, shift = linear_setup()
        h_row = np.array([[1.0, 1.0, 0.0]])
        trans = LinearTransition(f_mat, q_mat, shift)
        b = GaussianBelief(mean=[0.1, -0.2, 0.3], cov=0.5 * np.eye(3))
        res = ukf_step(b, np.array([0.5]), trans, lambda pts: pts @ h_row.T, np.array([[1e-14]]))
        assert abs(res.belief.mean[:2].sum() - 0.5) < 1e-6


class TestGrayCollapse:
    def test_single_regime_identity(self):
        b = GaussianBelief(mean=[0.1, 0.2], cov=np.eye(2))
        out = gray_collapse(RegimeBeliefs(probs=np.array([1.0])), [b])
        assert np.array_equal(out.mean, b.mean)
        assert np.array_equal(out.cov, b.cov)

    def test_symmetric_two_point_mixture(self):
        cov = np.array([[0.2, 0.05], [0.05, 0.3]])
        dv = np.array([0.3, -0.1])
        out = gray_collapse(
            RegimeBeliefs(probs=np.array([0.5, 0.5])),
            [GaussianBelief(mean=dv, cov=cov), GaussianBelief(mean=-dv, cov=cov)],
        )
        assert np.abs(out.cov - (cov + np.outer(dv, dv))).max() == 0.0

    def test_collapsed_cov_dominates_average(self):
        rng = np.random.default_rng(2)
        beliefs = [
            GaussianBelief(mean=rng.normal(size=2), cov=np.diag(rng.uniform(0.1, 0.5, 2)))
            for _ in range(3)
        ]
        probs = np.array([0.2, 0.5, 0.3])
        out = gray_collapse(RegimeBeliefs(probs=probs), beliefs)
        avg = sum(p * b.cov for p, b in zip(probs, beliefs))
        eig = np.linalg.eigvalsh(out.cov - avg)
        assert eig.min() > -1e-12


def tiny_rs_toy():
    d, m = 2, 2
    f_mats = [np.array([[0.9, 0.05], [0.0, 0.85]]), np.array([[0.6, -0.1], [0.1, 0.7]])]
    shifts = [np.array([0.02, 0.0]), np.array([-0.01, 0.03])]
    q_mats = [0.02 * np.eye(d), 0.05 * np.eye(d)]
    h_mat = np.array([[1.0, 0.3], [0.2, 1.1]])
    r_mats = [np.diag([0.04, 0.05]), np.diag([0.08, 0.03])]
    p_delta = np.array([[0.9, 0.1], [0.2, 0.8]])
    rng = np.random.default_rng(123)
    ys = [rng.normal(size=m) for _ in range(5)]
    return f_mats, shifts, q_mats, h_mat, r_mats, p_delta, ys


class TestRsUkf:
    def test_single_regime_equals_plain_ukf(self):
        f_mat, q_mat, h_mat, r_mat, shift = linear_setup()
        trans = LinearTransition(f_mat, q_mat, shift)
        meas = lambda pts: pts @ h_mat.T
        b = GaussianBelief(mean=np.zeros(3), cov=np.eye(3))
        y = np.array([0.4, -0.6])
        plain = ukf_step(b, y, trans, meas, r_mat)
        rs = rs_ukf_step([b], RegimeBeliefs(probs=np.array([1.0])), y,
                         [(trans, meas, r_mat)], np.array([[1.0]]))
        assert rs.loglik == plain.loglik
        assert np.array_equal(rs.beliefs[0].mean, plain.belief.mean)
        assert np.array_equal(rs.beliefs[0].cov, plain.belief.cov)

    def test_identical_regimes_leave_beliefs_neutral(self):
        f_mat, q_mat, h_mat, r_mat, shift = linear_setup()
        trans = LinearTransition(f_mat, q_mat, shift)
        meas = lambda pts: pts @ h_mat.T
        models = [(trans, meas, r_mat), (trans, meas, r_mat)]
        b = GaussianBelief(mean=np.zeros(3), cov=np.eye(3))
        probs = RegimeBeliefs(probs=np.array([0.3, 0.7]))
        p_delta = np.array([[0.8, 0.2], [0.4, 0.6]])
        rs = rs_ukf_step([b, b], probs, np.array([0.4, -0.6]), models, p_delta)
        assert np.abs(rs.probs.probs - probs.probs @ p_delta).max() < 1e-14

    def test_all_missing_advances_by_chain_only(self):
        f_mat, q_mat, h_mat, r_mat, shift = linear_setup()
        trans = LinearTransition(f_mat, q_mat, shift)
        meas = lambda pts: pts @ h_mat.T
        models = [(trans, meas, r_mat), (trans, meas, r_mat)]
        b = GaussianBelief(mean=np.zeros(3), cov=np.eye(3))
        probs = RegimeBeliefs(probs=np.array([0.3, 0.7]))
        p_delta = np.array([[0.8, 0.2], [0.4, 0.6]])
        rs = rs_ukf_step([b, b], probs, np.array([np.nan, np.nan]), models, p_delta)
        assert rs.loglik == 0.0
        assert np.abs(rs.probs.probs - probs.probs @ p_delta).max() < 1e-14
        assert np.array_equal(rs.beliefs[0].mean, rs.predicted[0].mean)

    def test_tiny_t_matches_path_enumeration_up_to_pinned_gap(self):
        f_mats, shifts, q_mats, h_mat, r_mats, p_delta, ys = tiny_rs_toy()
        prior_mean, prior_cov = np.array([0.1, -0.1]), 0.3 * np.eye(2)
        pi0 = np.array([0.5, 0.5])
        models = [
            (LinearTransition(f_mats[j], q_mats[j], shifts[j]), (lambda pts: pts @ h_mat.T), r_mats[j])
            for j in range(2)
        ]
        beliefs = [GaussianBelief(prior_mean.copy(), prior_cov.copy()) for _ in range(2)]
        probs = RegimeBeliefs(probs=pi0.copy())
        ll_rs = 0.0
        for y in ys:
            step = rs_ukf_step(beliefs, probs, y, models, p_delta)
            beliefs, probs = step.beliefs, step.probs
            ll_rs += step.loglik

        def kf_loglik(path):
            mean, cov = prior_mean.copy(), prior_cov.copy()
            ll = 0.0
            for t, j in enumerate(path):
                mean, cov, step_ll = exact_kf(
                    mean, cov, ys[t], f_mats[j], q_mats[j], h_mat, r_mats[j], shifts[j]
                )
                ll += step_ll
            return ll

        total = 0.0
        for path in itertools.product(range(2), repeat=5):
            w = 0.0
            for s0 in range(2):
                wp = pi0[s0]
                prev = s0
                for s in path:
                    wp *= p_delta[prev, s]
                    prev = s
                w += wp
            total += w * np.exp(kf_loglik(path))
        gap = ll_rs - np.log(total)
        assert gap == pytest.approx(GRAY_GAP_GOLDEN, rel=1e-9)
        assert abs(gap) < 1.0  # collapse stays close to the exact mixture


class TestRateBlockFilter:
    def test_single_regime_panel_equals_plain_ukf(self, small_model, credit_chain,
                                                  toy_rating_model):
        # collapse a two-label model onto identical dynamics in both regimes
        from regimeterm.model import FactorDynamics

        fds = tuple(
            FactorDynamics(
                {"L": fd.params["L"], "H": fd.params["L"]},
                {"L": fd.risk_price["L"], "H": fd.risk_price["L"]},
            )
            for fd in small_model.rate_factors
        )
        model = FullModel(
            rate_factors=fds,
            credit_factor=small_model.credit_factor,
            rate_chain=small_model.rate_chain,
            credit_chain=credit_chain,
            passthrough=small_model.passthrough,
            rating=toy_rating_model,
            maturities=small_model.maturities,
            rate_noise_sd={"L": {"CGB": 0.0008, "CDB": 0.0008},
                           "H": {"CGB": 0.0008, "CDB": 0.0008}},
            credit_noise_sd=small_model.credit_noise_sd,
            observed_ratings=("A", "B"),
        )
        panel = simulate_panel(model, weeks=80, seed=31, include_credit=False)
        y = np.hstack([panel.rate_yields["CGB"], panel.rate_yields["CDB"]])
        res = rate_block_filter(y, model)
        # regimes are indistinguishable: the mixture is degenerate, so the
        # loglik equals a plain single-regime filter to high accuracy
        from regimeterm.regimes import CtmcGenerator

        one = FullModel(
            rate_factors=tuple(
                FactorDynamics({"S": fd.params["L"]}, {"S": fd.risk_price["L"]})
                for fd in model.rate_factors
            ),
            credit_factor=FactorDynamics({"S": model.credit_factor.params["E"]}, {"S": 0.0}),
            rate_chain=CtmcGenerator(q=np.zeros((1, 1)), labels=("S",)),
            credit_chain=CtmcGenerator(q=np.zeros((1, 1)), labels=("S",)),
            passthrough=np.zeros((1, 1)),
            rating=toy_rating_model,
            maturities=model.maturities,
            rate_noise_sd={"S": {"CGB": 0.0008, "CDB": 0.0008}},
            credit_noise_sd={"S": 0.0012},
            observed_ratings=("A", "B"),
        )
        res_one = rate_block_filter(y, one)
        assert abs(res.loglik - res_one.loglik) < 1.0

    def test_two_regime_recovery(self, small_model):
        panel = simulate_panel(small_model, weeks=300, seed=42, include_credit=False)
        y = np.hstack([panel.rate_yields["CGB"], panel.rate_yields["CDB"]])
        res = rate_block_filter(y, small_model)
        post = slice(40, None)
        est = res.probs.argmax(axis=1)
        confident = res.probs.max(axis=1) > 0.9
        assert np.mean(est[post] == panel.true_rate_regime[post]) > 0.8
        assert np.mean(confident[post]) > 0.8

    def test_doubled_noise_lowers_loglik(self, small_model):
        panel = simulate_panel(small_model, weeks=200, seed=42, include_credit=False)
        y = np.hstack([panel.rate_yields["CGB"], panel.rate_yields["CDB"]])
        base = rate_block_filter(y, small_model).loglik
        noisy = FullModel(
            rate_factors=small_model.rate_factors,
            credit_factor=small_model.credit_factor,
            rate_chain=small_model.rate_chain,
            credit_chain=small_model.credit_chain,
            passthrough=small_model.passthrough,
            rating=small_model.rating,
            maturities=small_model.maturities,
            rate_noise_sd={
                lbl: {c: 2.0 * v for c, v in row.items()}
                for lbl, row in small_model.rate_noise_sd.items()
            },
            credit_noise_sd=small_model.credit_noise_sd,
            observed_ratings=small_model.observed_ratings,
        )
        assert rate_block_filter(y, noisy).loglik < base

    def test_missing_rows_contribute_nothing(self, small_model):
        panel = simulate_panel(small_model, weeks=60, seed=9, include_credit=False)
        y = np.hstack([panel.rate_yields["CGB"], panel.rate_yields["CDB"]])
        y_missing = y.copy()
        y_missing[30] = np.nan
        res = rate_block_filter(y_missing, small_model)
        assert res.loglik_contributions[30] == 0.0


class TestCreditBlockFilter:
    def test_joint_recovery_and_marginals(self, small_model):
        panel = simulate_panel(small_model, weeks=300, seed=42)
        y_rate = np.hstack([panel.rate_yields["CGB"], panel.rate_yields["CDB"]])
        res = rate_block_filter(y_rate, small_model)
        y_credit = np.hstack([panel.credit_yields[r] for r in small_model.observed_ratings])
        cres = credit_block_filter(y_credit, small_model, res.summaries)
        assert np.abs(cres.marginal_probs.sum(axis=1) - 1.0).max() < 1e-10
        post = slice(40, None)
        acc = np.mean(cres.marginal_probs.argmax(axis=1)[post] == panel.true_credit_regime[post])
        assert acc > 0.75

    def test_point_mass_rate_beliefs_reduce_to_conditional_filter(self, small_model):
        panel = simulate_panel(small_model, weeks=80, seed=5)
        y_rate = np.hstack([panel.rate_yields["CGB"], panel.rate_yields["CDB"]])
        res = rate_block_filter(y_rate, small_model)
        y_credit = np.hstack([panel.credit_yields[r] for r in small_model.observed_ratings])
        from regimeterm.filters import RateBlockSummary

        point = [
            RateBlockSummary(means=s.means, covs=s.covs, probs=np.array([1.0, 0.0]))
            for s in res.summaries
        ]
        cres = credit_block_filter(y_credit, small_model, point)
        # the marginal equals the regime-L conditional when beliefs are degenerate
        assert np.abs(cres.marginal_probs - cres.conditional_probs[:, 0, :]).max() < 1e-14

    def test_summary_length_checked(self, small_model):
        with pytest.raises(FilterError):
            credit_block_filter(np.zeros((5, 12)), small_model, [])
