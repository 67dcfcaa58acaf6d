"""Command-line pipeline: simulate, diagnose, calibrate, estimate, price,
decompose, validate, report.

Every run validates its config, seeds all randomness explicitly, writes its
artifacts under --out, and drops a manifest recording the config hash and
library versions, so identical invocations produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import build_model, load_config
from .estimation import OptimizerConfig, maximize_stage
from .filters import RateBlockSummary, credit_block_filter, rate_block_filter
from .hmm import classify, fit_hmm, information_criteria, regime_durations
from .model import RATE_CURVES
from .panels import CurvePanel, build_spreads, load_panels, write_panels
from .pipeline import credit_stage_problem, rate_stage_problem
from .pricing import (
    corporate_price,
    discount_bond_prices,
    mix_prices,
    price_to_yield,
    prob_weighted_mean,
    spread_decomposition,
)
from .ratings import (
    adjust_default_intensity,
    calibrate_pi,
    embed_generator,
    normalize_rows,
    rating_model,
    risk_neutral_distortion,
    spread_implied_default_prob,
    survival_curve,
)
from .report import (
    chart_with_regimes,
    duration_table,
    hmm_fit_table,
    parameter_table,
    write_json,
    write_manifest,
    write_table,
)
from .simulate import simulate_panel

logger = logging.getLogger("regimeterm")


def _panel_paths(out: Path) -> tuple[Path, Path]:
    return out / "panel.csv", out / "panel_truth.csv"


def cmd_simulate(cfg: dict, out: Path, seed: int) -> int:
    model = build_model(cfg)
    scfg = cfg.get("simulate", {})
    panel = simulate_panel(
        model,
        weeks=int(scfg.get("weeks", 550)),
        seed=seed,
        noise_scale=float(scfg.get("noise_scale", 1.0)),
        substeps=int(scfg.get("substeps", 16)),
        include_credit=bool(scfg.get("include_credit", True)) and model.rating is not None,
        start_date=str(scfg.get("start_date", "2014-04-18")),
    )
    panels = {
        curve: CurvePanel(curve, panel.dates, panel.maturities, panel.rate_yields[curve])
        for curve in RATE_CURVES
    }
    for rating_lbl, ys in panel.credit_yields.items():
        panels[rating_lbl] = CurvePanel(rating_lbl, panel.dates, panel.maturities, ys)
    panel_path, truth_path = _panel_paths(out)
    write_panels(panel_path, panels)
    truth = pd.DataFrame(
        {
            "date": [str(d) for d in panel.dates],
            "rate_regime": [panel.rate_labels[s] for s in panel.true_rate_regime],
            "credit_regime": [panel.credit_labels[s] for s in panel.true_credit_regime],
            **{f"x{i+1}": panel.true_factors[:, i] for i in range(4)},
        }
    )
    truth.to_csv(truth_path, index=False)
    write_manifest(out, cfg, "simulate", seed)
    logger.info("wrote %s and %s", panel_path, truth_path)
    return 0


def cmd_hmm(cfg: dict, out: Path, seed: int) -> int:
    hcfg = cfg.get("hmm", {})
    panels = load_panels(_panel_paths(out)[0])
    segments = hcfg.get("segments") or sorted(panels)
    k_values = [int(k) for k in hcfg.get("k_values", (1, 2, 3))]
    restarts = int(hcfg.get("restarts", 10))
    cov_type = str(hcfg.get("covariance", "full"))
    max_iter = int(hcfg.get("max_iter", 500))

    fit_results: dict[str, dict[int, tuple[float, float, float]]] = {}
    moment_rows = []
    durations = {}
    classification = {}
    for segment in segments:
        panel = panels[segment]
        y = panel.yields
        fit_results[segment] = {}
        best = None
        for k in k_values:
            model, loglik = fit_hmm(y, k, seed=seed, restarts=restarts,
                                    cov_type=cov_type, max_iter=max_iter)
            aic, bic = information_criteria(loglik, k, y.shape[1], y.shape[0])
            fit_results[segment][k] = (loglik, aic, bic)
            for j in range(k):
                moment_rows.append(
                    (segment, k, j, float(model.level()[j]), float(np.trace(model.covs[j])))
                )
            if best is None or bic < best[0]:
                best = (bic, k, model)
        _, k_best, model_best = best
        if k_best > 1:
            durations[segment] = regime_durations(model_best.trans, float(cfg.get("grid", {}).get("delta_weeks", 1)) / 52.0)
        states, smoothed = classify(model_best, y)
        classification[segment] = (panel.dates, states, smoothed)

    write_table(out, "hmm_fit", hmm_fit_table(fit_results))
    write_table(
        out,
        "hmm_moments",
        pd.DataFrame(moment_rows, columns=["segment", "k", "state", "mean_level", "dispersion"]),
    )
    if durations:
        write_table(out, "hmm_durations", duration_table(durations))
    rows = []
    for segment, (dates, states, smoothed) in classification.items():
        for i, d in enumerate(dates):
            rows.append((str(d), segment, int(states[i]), *[float(p) for p in smoothed[i]]))
    n_states_max = max(len(r) - 3 for r in rows)
    cols = ["date", "segment", "state"] + [f"prob_{j}" for j in range(n_states_max)]
    rows = [r + (np.nan,) * (len(cols) - len(r)) for r in rows]
    write_table(out, "hmm_classification", pd.DataFrame(rows, columns=cols))
    write_manifest(out, cfg, "hmm", seed)
    return 0


def cmd_calibrate_ratings(cfg: dict, out: Path, seed: int) -> int:
    rcfg = cfg.get("ratings", {})
    labels = tuple(rcfg.get("labels", ("AAA", "AA+", "AA", "AA-", "SG", "D")))
    recovery = float(rcfg.get("recovery", 0.0))
    if "transition_p" in rcfg:
        p_phys = normalize_rows(np.array(rcfg["transition_p"], dtype=float), labels=labels, measure="P")
        panels = load_panels(_panel_paths(out)[0])
        spreads = build_spreads(panels)
        horizons = [1, 2, 3, 5]
        q_imp = np.zeros((len(labels) - 1, len(horizons)))
        for i, lbl in enumerate(labels[:-1]):
            key = f"{lbl}-CDB"
            if key not in spreads:
                continue
            sp = spreads[key]
            for h, horizon in enumerate(horizons):
                if float(horizon) in sp.maturities:
                    col = sp.maturities.index(float(horizon))
                    s_bar = float(np.nanmean(sp.yields[:, col]))
                    q_imp[i, h] = spread_implied_default_prob(s_bar, horizon, recovery)
        pi = calibrate_pi(p_phys, q_imp, t_max=len(horizons), seed=seed)
        p_rn = risk_neutral_distortion(p_phys, pi)
    elif "transition_q" in rcfg:
        p_rn = normalize_rows(np.array(rcfg["transition_q"], dtype=float), labels=labels, measure="Q")
        pi = p_rn.default_probs
    else:
        raise ValueError("ratings config needs transition_p or transition_q")
    gen = embed_generator(p_rn)
    if "delta_nu" in rcfg:
        gen = adjust_default_intensity(gen, np.array(rcfg["delta_nu"], dtype=float))
    rmodel = rating_model(gen)

    matrix_df = pd.DataFrame(p_rn.p, columns=list(labels))
    matrix_df.insert(0, "from", list(labels))
    write_table(out, "rating_q_matrix", matrix_df)
    write_json(
        out,
        "rating_generator",
        {
            "labels": list(labels),
            "pi": [float(v) for v in pi],
            "migration_block": [[float(v) for v in row] for row in gen.lambda_block],
            "default_intensity": [float(v) for v in gen.nu],
            "modes": [float(v) for v in rmodel.decomposition.modes_d],
            "weights": [[float(v) for v in row] for row in rmodel.decomposition.weights],
        },
    )
    grid = np.array([1.0, 3.0, 5.0, 10.0])
    surv = survival_curve(rmodel.decomposition, grid)
    surv_df = pd.DataFrame(surv, columns=[f"t{int(t)}" for t in grid])
    surv_df.insert(0, "rating", list(labels[:-1]))
    write_table(out, "rating_survival", surv_df)
    write_manifest(out, cfg, "calibrate-ratings", seed)
    return 0


def _stacked_rate_yields(panels: dict[str, CurvePanel], maturities) -> tuple[np.ndarray, np.ndarray]:
    cgb, cdb = panels["CGB"], panels["CDB"]
    cols = [cgb.maturities.index(m) for m in maturities]
    y = np.hstack([cgb.yields[:, cols], cdb.yields[:, [cdb.maturities.index(m) for m in maturities]]])
    return cgb.dates, y


def _stacked_credit_yields(panels, ratings, maturities) -> np.ndarray:
    blocks = []
    for r in ratings:
        panel = panels[r]
        cols = [panel.maturities.index(m) for m in maturities]
        blocks.append(panel.yields[:, cols])
    return np.hstack(blocks)


def _optimizer_config(section: dict, seed: int) -> OptimizerConfig:
    return OptimizerConfig(
        starts=int(section.get("starts", 5)),
        perturb=float(section.get("perturb", 0.1)),
        max_iter=int(section.get("max_iter", 2000)),
        seed=seed,
    )


def _write_filter_outputs(out: Path, name: str, dates, labels, probs, means, covs, contributions):
    rows = []
    for t, d in enumerate(dates):
        for j, lbl in enumerate(labels):
            row = [str(d), lbl, float(probs[t, j])]
            row += [float(v) for v in np.atleast_1d(means[t, j])]
            row += [float(np.sqrt(v)) for v in np.atleast_1d(np.diag(np.atleast_2d(covs[t, j])))]
            row.append(float(contributions[t]))
            rows.append(row)
    n_factors = len(np.atleast_1d(means[0, 0]))
    cols = (
        ["date", "regime", "probability"]
        + [f"mean_x{i+1}" for i in range(n_factors)]
        + [f"sd_x{i+1}" for i in range(n_factors)]
        + ["loglik_contribution"]
    )
    write_table(out, name, pd.DataFrame(rows, columns=cols))


def cmd_estimate_rates(cfg: dict, out: Path, seed: int) -> int:
    panels = load_panels(_panel_paths(out)[0])
    model0 = build_model(cfg)
    dates, yields = _stacked_rate_yields(panels, model0.maturities)
    stage = rate_stage_problem(cfg, yields)
    result = maximize_stage(stage.problem, _optimizer_config(cfg.get("estimate_rates", {}), seed))
    cfg_hat = stage.apply(result.estimates)
    model_hat = build_model(cfg_hat)
    res = rate_block_filter(yields, model_hat)

    write_json(
        out,
        "estimates_rates",
        {
            "loglik": result.loglik,
            "parameters": {n: float(v) for n, v in zip(result.names, result.estimates)},
            "diagnostics": {k: int(v) if isinstance(v, (int, np.integer)) else v
                            for k, v in result.diagnostics.items()},
            "seed": seed,
        },
    )
    write_table(out, "params_rates", parameter_table(result.names, result.estimates, None))
    _write_filter_outputs(out, "filter_rates", dates, model_hat.rate_chain.labels,
                          res.probs, res.regime_means, res.regime_covs, res.loglik_contributions)
    # persist summaries for the second stage
    rows = []
    for t, d in enumerate(dates):
        for j, lbl in enumerate(model_hat.rate_chain.labels):
            s = res.summaries[t]
            rows.append([str(d), lbl, float(s.probs[j])] + [float(v) for v in s.means[j]]
                        + [float(v) for v in s.covs[j].ravel()])
    cols = ["date", "regime", "prob"] + [f"m{i}" for i in range(3)] + [f"c{i}" for i in range(9)]
    write_table(out, "rate_summaries", pd.DataFrame(rows, columns=cols))
    # estimated config snapshot feeds later stages
    write_json(out, "config_rates_hat", cfg_hat)
    write_manifest(out, cfg, "estimate-rates", seed)
    return 0


def _load_summaries(out: Path, n_regimes: int) -> list[RateBlockSummary]:
    df = pd.read_csv(out / "rate_summaries.csv")
    dates = df["date"].unique()
    summaries = []
    for d in dates:
        sub = df[df["date"] == d]
        means = sub[[f"m{i}" for i in range(3)]].to_numpy()
        covs = sub[[f"c{i}" for i in range(9)]].to_numpy().reshape(n_regimes, 3, 3)
        probs = sub["prob"].to_numpy()
        summaries.append(RateBlockSummary(means=means, covs=covs, probs=probs))
    return summaries


def cmd_estimate_credit(cfg: dict, out: Path, seed: int) -> int:
    cfg_hat_path = out / "config_rates_hat.json"
    cfg_used = json.loads(cfg_hat_path.read_text()) if cfg_hat_path.exists() else cfg
    panels = load_panels(_panel_paths(out)[0])
    model0 = build_model(cfg_used)
    if model0.rating is None:
        raise ValueError("credit estimation requires rating inputs in the config")
    yields = _stacked_credit_yields(panels, model0.observed_ratings, model0.maturities)
    summaries = _load_summaries(out, model0.rate_chain.n)
    stage = credit_stage_problem(cfg_used, yields, summaries)
    result = maximize_stage(stage.problem, _optimizer_config(cfg.get("estimate_credit", {}), seed))
    cfg_final = stage.apply(result.estimates)
    model_hat = build_model(cfg_final)
    res = credit_block_filter(yields, model_hat, summaries)

    write_json(
        out,
        "estimates_credit",
        {
            "loglik": result.loglik,
            "parameters": {n: float(v) for n, v in zip(result.names, result.estimates)},
            "seed": seed,
        },
    )
    write_table(out, "params_credit", parameter_table(result.names, result.estimates, None))
    dates = panels[model0.observed_ratings[0]].dates
    rows = []
    for t, d in enumerate(dates):
        for ci, cl in enumerate(model_hat.credit_chain.labels):
            rows.append(
                (str(d), cl, float(res.marginal_probs[t, ci]),
                 *[float(res.conditional_probs[t, ri, ci]) for ri in range(model_hat.rate_chain.n)])
            )
    cols = ["date", "regime", "marginal_prob"] + [
        f"prob_given_{rl}" for rl in model_hat.rate_chain.labels
    ]
    write_table(out, "filter_credit", pd.DataFrame(rows, columns=cols))
    write_json(out, "config_final_hat", cfg_final)
    write_manifest(out, cfg, "estimate-credit", seed)
    return 0


def cmd_price(cfg: dict, out: Path, seed: int) -> int:
    cfg_path = out / "config_final_hat.json"
    if not cfg_path.exists():
        cfg_path = out / "config_rates_hat.json"
    cfg_used = json.loads(cfg_path.read_text()) if cfg_path.exists() else cfg
    model = build_model(cfg_used)
    spec = model.pricing_spec()
    pcfg = cfg.get("price", {})
    max_terms = int(pcfg.get("max_terms", 4096))
    panels = load_panels(_panel_paths(out)[0])
    dates, rate_yields = _stacked_rate_yields(panels, model.maturities)
    rate_res = rate_block_filter(rate_yields, model)
    wanted = pcfg.get("dates")
    if wanted:
        idx = [int(np.flatnonzero(dates.astype(str) == d)[0]) for d in wanted]
    else:
        idx = [len(dates) - 1]
    steps = model.maturity_steps()
    ratings = [r for r in pcfg.get("ratings", []) if model.rating is not None]

    credit_res = None
    if ratings:
        yields_c = _stacked_credit_yields(panels, model.observed_ratings, model.maturities)
        credit_res = credit_block_filter(yields_c, model, rate_res.summaries)

    rows = []
    r_labels = model.rate_chain.labels
    for t in idx:
        beliefs = rate_res.probs[t]
        for curve in RATE_CURVES:
            for m_i, n in enumerate(steps):
                per_regime = np.empty(len(r_labels))
                for si in range(len(r_labels)):
                    x = np.concatenate([rate_res.regime_means[t, si], [0.0]])
                    per_regime[si] = discount_bond_prices(
                        spec, curve, x, int(n), max_terms=max_terms
                    ).values[si]
                from .pricing import RegimePriceVector

                mixed = mix_prices(
                    RegimePriceVector(values=per_regime, maturity=n * model.grid_delta,
                                      labels=r_labels),
                    beliefs,
                )
                tau = float(model.maturities[m_i])
                rows.append(
                    (str(dates[t]), curve, tau, *[float(v) for v in per_regime],
                     float(mixed), price_to_yield(mixed, tau))
                )
        for rating_lbl in ratings:
            for m_i, n in enumerate(steps):
                joint_vals = []
                joint_weights = []
                for ri, rl in enumerate(r_labels):
                    x = np.concatenate([rate_res.regime_means[t, ri],
                                        [credit_res.conditional_means[t, ri, :].mean()]])
                    pv = corporate_price(spec, rating_lbl, x, int(n), max_terms=max_terms)
                    for ci, cl in enumerate(model.credit_chain.labels):
                        joint_vals.append(pv.values[ri * model.credit_chain.n + ci])
                        joint_weights.append(
                            rate_res.probs[t, ri] * credit_res.conditional_probs[t, ri, ci]
                        )
                mixed = float(np.dot(joint_vals, joint_weights))
                tau = float(model.maturities[m_i])
                rows.append(
                    (str(dates[t]), rating_lbl, tau, *([np.nan] * len(r_labels)),
                     mixed, price_to_yield(mixed, tau))
                )
    cols = ["date", "segment", "maturity"] + [f"price_{lbl}" for lbl in r_labels] + ["price", "yield"]
    write_table(out, "prices", pd.DataFrame(rows, columns=cols))
    write_manifest(out, cfg, "price", seed)
    return 0


def cmd_decompose(cfg: dict, out: Path, seed: int) -> int:
    panels = load_panels(_panel_paths(out)[0])
    spreads = build_spreads(panels)
    rows = []
    for name, panel in sorted(spreads.items()):
        for j, m in enumerate(panel.maturities):
            rows.append((name, float(m), float(np.nanmean(panel.yields[:, j]))))
    write_table(out, "spread_means", pd.DataFrame(rows, columns=["spread", "maturity", "mean"]))

    filt_path = out / "filter_rates.csv"
    if filt_path.exists():
        filt = pd.read_csv(filt_path)
        labels = sorted(filt["regime"].unique())
        weight_rows = []
        for name, panel in sorted(spreads.items()):
            for lbl in labels:
                sub = filt[filt["regime"] == lbl]
                w = sub.set_index("date")["probability"]
                common = [i for i, d in enumerate(panel.dates) if str(d) in w.index]
                if not common:
                    continue
                wv = np.array([w[str(panel.dates[i])] for i in common])
                for j, m in enumerate(panel.maturities):
                    series = panel.yields[common, j]
                    ok = np.isfinite(series)
                    if ok.any() and wv[ok].sum() > 0:
                        weight_rows.append(
                            (name, lbl, float(m), prob_weighted_mean(series[ok], wv[ok]))
                        )
        write_table(
            out,
            "spread_regime_means",
            pd.DataFrame(weight_rows, columns=["spread", "regime", "maturity", "weighted_mean"]),
        )
    write_manifest(out, cfg, "decompose", seed)
    return 0


def cmd_validate(cfg: dict, out: Path, seed: int) -> int:
    """Fast oracle/invariant sweep; green summary means the install is sane."""
    from .affine import GcirParams, affine_coefficients, riccati_oracle
    from .regimes import CtmcGenerator, kronecker_sum, transition_matrix
    from .ratings import RatingGenerator, lando_decomposition
    from scipy.linalg import expm

    checks: dict[str, bool] = {}
    rng = np.random.default_rng(seed)
    ok = True
    p = GcirParams(kappa=0.7, theta=0.03, alpha=0.004, beta=0.08, measure="Q")
    for i in range(5):
        c1 = rng.uniform(0.2, 1.5)
        tau = rng.uniform(0.1, 12.0)
        c = affine_coefficients(p, c1, 0.0, tau)
        o = riccati_oracle(p, c1, 0.0, tau, steps=4000)
        checks[f"affine_oracle_{i}"] = abs(c.a - o.a) < 1e-8 and abs(c.b - o.b) < 1e-8
    qr = CtmcGenerator(q=[[-0.4, 0.4], [0.6, -0.6]], labels=("L", "H"))
    qc = CtmcGenerator(q=[[-0.3, 0.3], [0.9, -0.9]], labels=("E", "C"))
    joint = kronecker_sum(qr, qc)
    lhs = transition_matrix(joint, 0.7).p
    rhs = np.kron(transition_matrix(qr, 0.7).p, transition_matrix(qc, 0.7).p)
    checks["kronecker_identity"] = bool(np.abs(lhs - rhs).max() < 1e-10)
    lam = np.array([[-0.2, 0.2], [0.25, -0.25]])
    nu = np.array([0.02, 0.09])
    gen = RatingGenerator(lambda_block=lam, nu=nu, labels=("A", "B", "D"))
    decomp = lando_decomposition(gen)
    surv_spec = decomp.weights @ np.exp(decomp.modes_d * 2.0)
    surv_expm = 1.0 - expm(gen.full_generator() * 2.0)[:2, 2]
    checks["lando_survival"] = bool(np.abs(surv_spec - surv_expm).max() < 1e-10)
    checks["lando_rows"] = bool(np.abs(decomp.weights.sum(axis=1) - 1.0).max() < 1e-10)
    ok = all(checks.values())
    write_json(out, "validate_summary", {"ok": ok, "checks": {k: bool(v) for k, v in checks.items()}})
    write_manifest(out, cfg, "validate", seed)
    return 0 if ok else 1


def cmd_report(cfg: dict, out: Path, seed: int) -> int:
    panels = load_panels(_panel_paths(out)[0])
    cls_path = out / "hmm_classification.csv"
    states_by_segment: dict[str, np.ndarray] = {}
    if cls_path.exists():
        cls = pd.read_csv(cls_path)
        for segment, sub in cls.groupby("segment"):
            states_by_segment[str(segment)] = sub.sort_values("date")["state"].to_numpy()
    for segment in sorted(panels):
        panel = panels[segment]
        series = {
            f"{m:g}y": panel.yields[:, j]
            for j, m in enumerate(panel.maturities)
            if m in (1.0, 5.0, 10.0)
        }
        states = states_by_segment.get(segment)
        if states is not None and len(states) != panel.n_dates:
            states = None
        chart_with_regimes(
            out / f"chart_{segment.replace('+', 'p').replace('-', 'm')}.svg",
            panel.dates,
            series,
            states=states,
            title=f"{segment} weekly yields",
        )
    spreads = build_spreads(panels)
    for name in sorted(spreads):
        panel = spreads[name]
        series = {f"{m:g}y": panel.yields[:, j] for j, m in enumerate(panel.maturities) if m in (1.0, 5.0)}
        chart_with_regimes(
            out / f"chart_spread_{name.replace('+', 'p').replace('-', 'm')}.svg",
            panel.dates,
            series,
            title=f"{name} spread",
        )
    write_manifest(out, cfg, "report", seed)
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "hmm": cmd_hmm,
    "calibrate-ratings": cmd_calibrate_ratings,
    "estimate-rates": cmd_estimate_rates,
    "estimate-credit": cmd_estimate_credit,
    "price": cmd_price,
    "decompose": cmd_decompose,
    "validate": cmd_validate,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="regimeterm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"regimeterm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=True, help="artifact directory")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
        p.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        try:
            from threadpoolctl import threadpool_limits

            threadpool_limits(limits=args.threads)
        except ImportError:
            logger.info("threadpoolctl unavailable; --threads ignored")
    cfg = load_config(args.config)
    seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return _COMMANDS[args.command](cfg, out, seed)
    except Exception as exc:  # pragma: no cover - CLI surface
        logger.error("%s failed: %s", args.command, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
