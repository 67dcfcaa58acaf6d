"""Path simulation and Monte-Carlo pricing oracles.

Randomness uses the Philox counter-based bit generator keyed by
(seed, stream), so every draw is reproducible across platforms and paths
can be generated independently in any order.  Diffusions are discretized
with a full-truncation Euler scheme (the variance argument is floored at
zero inside the square root).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .affine import GcirParams
from .model import RATE_CURVES, FullModel
from .pricing import ModelSpec, corporate_mode_ladder, discount_ladder, short_rate_loadings
from .regimes import CtmcGenerator


class SimulationError(ValueError):
    pass


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by (seed, stream)."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream & 0xFFFFFFFFFFFFFFFF)])
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class RegimePath:
    """Piecewise-constant regime path: state `states[k]` holds on
    [times[k], times[k+1]) with times[0] = 0."""

    times: np.ndarray
    states: np.ndarray
    horizon: float
    labels: tuple[str, ...]

    def state_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.states[np.clip(idx, 0, len(self.states) - 1)]

    def occupation_fractions(self) -> np.ndarray:
        edges = np.append(self.times, self.horizon)
        durations = np.diff(edges)
        out = np.zeros(len(self.labels))
        np.add.at(out, self.states, durations)
        return out / self.horizon


def simulate_ctmc(
    g: CtmcGenerator, horizon: float, seed: int, stream: int = 0, start_state: int | None = None
) -> RegimePath:
    """Exponential-holding-time simulation of the regime chain."""
    rng = make_rng(seed, stream)
    n = g.n
    if start_state is None:
        state = int(rng.integers(0, n))
    else:
        state = int(start_state)
    times = [0.0]
    states = [state]
    t = 0.0
    while True:
        rate = -g.q[state, state]
        if rate <= 0.0:
            break
        t = t + rng.exponential(1.0 / rate)
        if t >= horizon:
            break
        probs = g.q[state].copy()
        probs[state] = 0.0
        probs = probs / rate
        state = int(rng.choice(n, p=probs))
        times.append(t)
        states.append(state)
    return RegimePath(
        times=np.array(times), states=np.array(states, dtype=int), horizon=horizon, labels=g.labels
    )


def simulate_gcir(
    p: GcirParams | Mapping[str, GcirParams],
    x0: float,
    horizon: float,
    dt: float,
    regime_path: RegimePath | None = None,
    seed: int = 0,
    stream: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Full-truncation Euler path of one factor; parameters may switch with
    a regime path.  Returns (time grid, path)."""
    rng = make_rng(seed, stream)
    n_steps = int(round(horizon / dt))
    t_grid = np.arange(n_steps + 1) * dt
    x = np.empty(n_steps + 1)
    x[0] = x0
    if regime_path is None:
        if not isinstance(p, GcirParams):
            raise SimulationError("pass a single parameter set or a regime path")
        kappas = np.full(n_steps, p.kappa)
        thetas = np.full(n_steps, p.theta)
        alphas = np.full(n_steps, p.alpha)
        betas = np.full(n_steps, p.beta)
    else:
        states = regime_path.state_at(t_grid[:-1])
        by_label = p if not isinstance(p, GcirParams) else None
        if by_label is None:
            raise SimulationError("regime path requires per-regime parameters")
        ordered = [by_label[lbl] for lbl in regime_path.labels]
        kappas = np.array([ordered[s].kappa for s in states])
        thetas = np.array([ordered[s].theta for s in states])
        alphas = np.array([ordered[s].alpha for s in states])
        betas = np.array([ordered[s].beta for s in states])
    shocks = rng.standard_normal(n_steps) * np.sqrt(dt)
    for k in range(n_steps):
        var = max(alphas[k] + betas[k] * x[k], 0.0)
        x[k + 1] = x[k] + kappas[k] * (thetas[k] - x[k]) * dt + np.sqrt(var) * shocks[k]
    return t_grid, x


def _euler_block(rng, kappa, theta, alpha, beta, x0, n_steps, dt, n_paths):
    """Vectorized Euler with running trapezoidal integral; constant parameters."""
    x = np.full(n_paths, float(x0))
    integral = np.zeros(n_paths)
    sq_dt = np.sqrt(dt)
    for _ in range(n_steps):
        var = np.maximum(alpha + beta * x, 0.0)
        x_new = x + kappa * (theta - x) * dt + np.sqrt(var) * (sq_dt * rng.standard_normal(n_paths))
        integral += 0.5 * dt * (x + x_new)
        x = x_new
    return x, integral


def mc_transform_oracle(
    p: GcirParams,
    c1: float,
    c2: float,
    tau: float,
    paths: int = 200_000,
    dt: float | None = None,
    seed: int = 0,
    x0: float | None = None,
    chunk: int = 50_000,
) -> tuple[float, float]:
    """Monte-Carlo estimate of E[exp(-c1 * int x du - c2 * x_tau)].

    Returns (estimate, standard error).  The kernel integral uses the
    trapezoidal rule on the simulation grid.
    """
    if paths < 10_000:
        raise SimulationError("use at least 1e4 paths for the oracle")
    if dt is None:
        dt = 1.0 / (52.0 * 64.0)
    x0 = p.theta if x0 is None else x0
    n_steps = max(1, int(round(tau / dt)))
    dt_eff = tau / n_steps
    total, total_sq, done = 0.0, 0.0, 0
    stream = 0
    while done < paths:
        m = min(chunk, paths - done)
        rng = make_rng(seed, stream)
        x_t, integral = _euler_block(rng, p.kappa, p.theta, p.alpha, p.beta, x0, n_steps, dt_eff, m)
        payoff = np.exp(-c1 * integral - c2 * x_t)
        total += payoff.sum()
        total_sq += (payoff * payoff).sum()
        done += m
        stream += 1
    mean = total / paths
    var = max(total_sq / paths - mean * mean, 0.0)
    se = np.sqrt(var / paths)
    return float(mean), float(se)


def _regime_indices_on_grid(path: RegimePath, t_grid: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(path.times, t_grid, side="right") - 1
    return path.states[np.clip(idx, 0, len(path.states) - 1)]


def mc_sovereign_oracle(
    spec: ModelSpec,
    curve: str,
    x0: Sequence[float],
    taus: Sequence[float],
    start_regime: str,
    paths: int = 100_000,
    dt: float | None = None,
    seed: int = 0,
    chunk: int = 10_000,
) -> dict[float, tuple[float, float]]:
    """Conditional Monte-Carlo discount-bond prices for one starting rate regime.

    Simulates continuous-time regime switching and factor paths under the
    pricing measure, integrates the short rate by the trapezoidal rule, and
    returns {tau: (price, se)} from a single set of paths with checkpoints.
    """
    if dt is None:
        dt = spec.grid_delta / 64.0
    taus = sorted(taus)
    horizon = taus[-1]
    n_steps = int(round(horizon / dt))
    t_grid = np.arange(n_steps + 1) * dt
    checkpoints = {tau: int(round(tau / dt)) for tau in taus}
    loadings = short_rate_loadings(curve)
    labels = spec.rate_chain.labels
    s0 = labels.index(start_regime)
    x0 = np.asarray(x0, dtype=float)

    kappa = np.array([[spec.rate_factors[f][lbl].kappa for lbl in labels] for f in range(3)])
    theta = np.array([[spec.rate_factors[f][lbl].theta for lbl in labels] for f in range(3)])
    alpha = np.array([[spec.rate_factors[f][lbl].alpha for lbl in labels] for f in range(3)])
    beta = np.array([[spec.rate_factors[f][lbl].beta for lbl in labels] for f in range(3)])

    sums = {tau: 0.0 for tau in taus}
    sums_sq = {tau: 0.0 for tau in taus}
    done, stream = 0, 0
    while done < paths:
        m = min(chunk, paths - done)
        rng = make_rng(seed, stream)
        regimes = np.empty((m, n_steps), dtype=np.int8)
        for i in range(m):
            rp = simulate_ctmc(spec.rate_chain, horizon, seed, stream=(stream << 20) + i + 1,
                               start_state=s0)
            regimes[i] = _regime_indices_on_grid(rp, t_grid[:-1])
        x = np.tile(x0[:3, None], (1, m)).astype(float)
        integral = np.zeros(m)
        rate = loadings[:3] @ x
        sq_dt = np.sqrt(dt)
        for k in range(n_steps):
            reg = regimes[:, k]
            z = rng.standard_normal((3, m))
            x_new = np.empty_like(x)
            for f in range(3):
                var = np.maximum(alpha[f, reg] + beta[f, reg] * x[f], 0.0)
                x_new[f] = x[f] + kappa[f, reg] * (theta[f, reg] - x[f]) * dt + np.sqrt(var) * sq_dt * z[f]
            rate_new = loadings[:3] @ x_new
            integral += 0.5 * dt * (rate + rate_new)
            x, rate = x_new, rate_new
            for tau, kc in checkpoints.items():
                if k + 1 == kc:
                    payoff = np.exp(-integral)
                    sums[tau] += payoff.sum()
                    sums_sq[tau] += (payoff * payoff).sum()
        done += m
        stream += 1
    out = {}
    for tau in taus:
        mean = sums[tau] / paths
        var = max(sums_sq[tau] / paths - mean * mean, 0.0)
        out[tau] = (float(mean), float(np.sqrt(var / paths)))
    return out


def mc_corporate_oracle(
    spec: ModelSpec,
    ratings: Sequence[str],
    x0: Sequence[float],
    taus: Sequence[float],
    start_rate: str,
    start_credit: str,
    paths: int = 100_000,
    dt: float | None = None,
    seed: int = 0,
    chunk: int = 10_000,
) -> dict[str, dict[float, tuple[float, float]]]:
    """Conditional Monte-Carlo corporate bond prices for one starting joint regime.

    Conditional on a simulated factor/regime path, the survival probability
    collapses to the survival-weight combination of exponentials in the
    integrated intensity driver, so no rating chain needs to be sampled:

        payoff_i = sum_j w[i, j] * exp(d_j * int mu - int r_cdb).
    """
    if spec.rating is None:
        raise SimulationError("pricing spec has no rating inputs")
    if dt is None:
        dt = spec.grid_delta / 64.0
    taus = sorted(taus)
    horizon = taus[-1]
    n_steps = int(round(horizon / dt))
    t_grid = np.arange(n_steps + 1) * dt
    checkpoints = {tau: int(round(tau / dt)) for tau in taus}
    r_labels = spec.rate_chain.labels
    c_labels = spec.credit_chain.labels
    ri0, ci0 = r_labels.index(start_rate), c_labels.index(start_credit)
    x0 = np.asarray(x0, dtype=float)
    decomp = spec.rating.decomposition
    d_modes = decomp.modes_d
    weights = decomp.weights
    rating_rows = [spec.rating.rating_index(r) for r in ratings]

    kappa_r = np.array([[spec.rate_factors[f][lbl].kappa for lbl in r_labels] for f in range(3)])
    theta_r = np.array([[spec.rate_factors[f][lbl].theta for lbl in r_labels] for f in range(3)])
    alpha_r = np.array([[spec.rate_factors[f][lbl].alpha for lbl in r_labels] for f in range(3)])
    beta_r = np.array([[spec.rate_factors[f][lbl].beta for lbl in r_labels] for f in range(3)])
    kappa_c = np.array([spec.credit_factor[lbl].kappa for lbl in c_labels])
    theta_c = np.array([spec.credit_factor[lbl].theta for lbl in c_labels])
    alpha_c = np.array([spec.credit_factor[lbl].alpha for lbl in c_labels])
    beta_c = np.array([spec.credit_factor[lbl].beta for lbl in c_labels])
    # passthrough[ci, ri]
    pt = spec.passthrough

    sums = {r: {tau: 0.0 for tau in taus} for r in ratings}
    sums_sq = {r: {tau: 0.0 for tau in taus} for r in ratings}
    done, stream = 0, 0
    while done < paths:
        m = min(chunk, paths - done)
        rng = make_rng(seed, stream)
        reg_r = np.empty((m, n_steps), dtype=np.int8)
        reg_c = np.empty((m, n_steps), dtype=np.int8)
        for i in range(m):
            rp = simulate_ctmc(spec.rate_chain, horizon, seed, stream=(stream << 21) + 2 * i + 1,
                               start_state=ri0)
            cp = simulate_ctmc(spec.credit_chain, horizon, seed, stream=(stream << 21) + 2 * i + 2,
                               start_state=ci0)
            reg_r[i] = _regime_indices_on_grid(rp, t_grid[:-1])
            reg_c[i] = _regime_indices_on_grid(cp, t_grid[:-1])
        xr = np.tile(x0[:3, None], (1, m)).astype(float)
        xc = np.full(m, float(x0[3]))
        int_r = np.zeros(m)
        int_mu = np.zeros(m)
        level = xr[0] + xr[1]
        rate = level + xr[2]
        mu = pt[reg_c[:, 0], reg_r[:, 0]] * level + xc
        sq_dt = np.sqrt(dt)
        for k in range(n_steps):
            rr, cc = reg_r[:, k], reg_c[:, k]
            z = rng.standard_normal((4, m))
            xr_new = np.empty_like(xr)
            for f in range(3):
                var = np.maximum(alpha_r[f, rr] + beta_r[f, rr] * xr[f], 0.0)
                xr_new[f] = (
                    xr[f] + kappa_r[f, rr] * (theta_r[f, rr] - xr[f]) * dt + np.sqrt(var) * sq_dt * z[f]
                )
            var_c = np.maximum(alpha_c[cc] + beta_c[cc] * xc, 0.0)
            xc_new = xc + kappa_c[cc] * (theta_c[cc] - xc) * dt + np.sqrt(var_c) * sq_dt * z[3]
            level_new = xr_new[0] + xr_new[1]
            rate_new = level_new + xr_new[2]
            # the driver's regime is frozen over [t_k, t_k+dt) at its left value
            mu_new = pt[cc, rr] * level_new + xc_new
            int_r += 0.5 * dt * (rate + rate_new)
            int_mu += 0.5 * dt * (mu + mu_new)
            xr, xc, rate, mu = xr_new, xc_new, rate_new, mu_new
            for tau, kc_ in checkpoints.items():
                if k + 1 == kc_:
                    mode_vals = np.exp(d_modes[:, None] * int_mu[None, :] - int_r[None, :])
                    for r_lbl, row in zip(ratings, rating_rows):
                        payoff = weights[row] @ mode_vals
                        sums[r_lbl][tau] += payoff.sum()
                        sums_sq[r_lbl][tau] += (payoff * payoff).sum()
        done += m
        stream += 1
    out: dict[str, dict[float, tuple[float, float]]] = {}
    for r_lbl in ratings:
        out[r_lbl] = {}
        for tau in taus:
            mean = sums[r_lbl][tau] / paths
            var = max(sums_sq[r_lbl][tau] / paths - mean * mean, 0.0)
            out[r_lbl][tau] = (float(mean), float(np.sqrt(var / paths)))
    return out


@dataclass(frozen=True)
class SyntheticPanel:
    """Simulated observation panel with its generating ground truth."""

    dates: np.ndarray
    maturities: tuple[float, ...]
    rate_yields: dict[str, np.ndarray]       # curve -> (T, M)
    credit_yields: dict[str, np.ndarray]     # rating -> (T, M)
    true_factors: np.ndarray                 # (T, 4)
    true_rate_regime: np.ndarray             # (T,) indices
    true_credit_regime: np.ndarray           # (T,)
    rate_labels: tuple[str, ...]
    credit_labels: tuple[str, ...]
    seed: int


def simulate_panel(
    model: FullModel,
    weeks: int,
    seed: int,
    noise_scale: float = 1.0,
    substeps: int = 16,
    include_credit: bool = True,
    start_date: str = "2014-04-18",
) -> SyntheticPanel:
    """Generate a synthetic weekly panel of model-implied yields plus noise.

    Latent regimes follow their chains in continuous time; factors follow
    full-truncation Euler at `substeps` per week; measurement noise is
    regime-conditional Gaussian.  Yields use the regime-conditional
    collapsed pricing map evaluated at the true state and regime, matching
    the measurement equation assumed by the filters.
    """
    delta = model.grid_delta
    horizon = weeks * delta
    dt = delta / substeps
    spec = model.pricing_spec()
    steps_grid = model.maturity_steps()
    n_max = int(steps_grid.max())
    x_ref = model.reference_state()
    rng = make_rng(seed, 0)

    rate_path = simulate_ctmc(model.rate_chain, horizon, seed, stream=1)
    credit_path = simulate_ctmc(model.credit_chain, horizon, seed, stream=2)
    n_fine = weeks * substeps
    t_fine = np.arange(n_fine + 1) * dt
    reg_r_fine = _regime_indices_on_grid(rate_path, t_fine[:-1])
    reg_c_fine = _regime_indices_on_grid(credit_path, t_fine[:-1])

    x = np.empty((n_fine + 1, 4))
    for f in range(3):
        fd = model.rate_factors[f]
        x[0, f] = np.mean([p.theta for p in fd.params.values()])
    x[0, 3] = np.mean([p.theta for p in model.credit_factor.params.values()])
    r_labels = model.rate_chain.labels
    c_labels = model.credit_chain.labels
    shocks = rng.standard_normal((n_fine, 4)) * np.sqrt(dt)
    for k in range(n_fine):
        rl, cl = r_labels[reg_r_fine[k]], c_labels[reg_c_fine[k]]
        for f in range(3):
            p = model.rate_factors[f].params[rl]
            var = max(p.alpha + p.beta * x[k, f], 0.0)
            x[k + 1, f] = x[k, f] + p.kappa * (p.theta - x[k, f]) * dt + np.sqrt(var) * shocks[k, f]
        pc = model.credit_factor.params[cl]
        var = max(pc.alpha + pc.beta * x[k, 3], 0.0)
        x[k + 1, 3] = x[k, 3] + pc.kappa * (pc.theta - x[k, 3]) * dt + np.sqrt(var) * shocks[k, 3]

    weekly_idx = np.arange(1, weeks + 1) * substeps
    factors = x[weekly_idx]
    reg_r = reg_r_fine[np.minimum(weekly_idx - 1, n_fine - 1)]
    reg_c = reg_c_fine[np.minimum(weekly_idx - 1, n_fine - 1)]

    taus = np.asarray(model.maturities, dtype=float)
    rate_yields: dict[str, np.ndarray] = {}
    for ci, curve in enumerate(RATE_CURVES):
        a_lad, b_lad = discount_ladder(spec, curve, n_max, x_ref)
        y = np.empty((weeks, len(taus)))
        sds = np.empty((weeks, len(taus)))
        for t in range(weeks):
            s = reg_r[t]
            a = a_lad[s, steps_grid]
            b = b_lad[s, steps_grid, :]
            logp = a - b @ np.concatenate([factors[t, :3], [0.0]])
            y[t] = -logp / taus
            sds[t] = model.rate_noise_vector(r_labels[s])[ci * len(taus):(ci + 1) * len(taus)]
        eps = rng.standard_normal((weeks, len(taus)))
        rate_yields[curve] = y + noise_scale * sds * eps

    credit_yields: dict[str, np.ndarray] = {}
    if include_credit and model.rating is not None:
        decomp = model.rating.decomposition
        ladders = [corporate_mode_ladder(spec, j, n_max, x_ref) for j in range(decomp.n_modes)]
        joint_labels = spec.joint_labels
        for rating_lbl in model.observed_ratings:
            i = model.rating.rating_index(rating_lbl)
            w = decomp.weights[i]
            y = np.empty((weeks, len(taus)))
            for t in range(weeks):
                s_joint = joint_labels.index((r_labels[reg_r[t]], c_labels[reg_c[t]]))
                v = np.zeros(len(taus))
                for j in range(decomp.n_modes):
                    a_lad, b_lad = ladders[j]
                    a = a_lad[s_joint, steps_grid]
                    b = b_lad[s_joint, steps_grid, :]
                    v += w[j] * np.exp(a - b @ factors[t])
                y[t] = -np.log(v) / taus
            eps = rng.standard_normal((weeks, len(taus)))
            sds = np.empty((weeks, len(taus)))
            for t in range(weeks):
                sds[t] = model.credit_noise_vector(c_labels[reg_c[t]])[: len(taus)]
            credit_yields[rating_lbl] = y + noise_scale * sds * eps

    start = np.datetime64(start_date)
    dates = start + np.arange(weeks) * np.timedelta64(7, "D")
    return SyntheticPanel(
        dates=dates,
        maturities=tuple(taus),
        rate_yields=rate_yields,
        credit_yields=credit_yields,
        true_factors=factors,
        true_rate_regime=reg_r,
        true_credit_regime=reg_c,
        rate_labels=r_labels,
        credit_labels=c_labels,
        seed=seed,
    )
