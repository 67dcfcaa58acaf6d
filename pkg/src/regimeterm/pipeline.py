"""Estimation stages and orchestration glue between config, filters, and
the optimizer.

A stage problem closes over the run config: free parameters are dotted
config paths, models are rebuilt per evaluation, and the likelihood is the
corresponding block filter's.  The first stage optionally enforces the
regime-labeling convention that the first level factor's long-run mean is
ordered across regimes (parameterized as a base level plus a nonnegative
gap), which pins down an otherwise label-symmetric likelihood.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .config import build_model, default_transform, get_param, with_overrides
from .estimation import ParamSpec, ParamVector, StageProblem
from .filters import credit_block_filter, rate_block_filter

_THETA_KEYS = ("model.factors.x1.{low}.theta", "model.factors.x1.{high}.theta")


@dataclass
class RateStage:
    problem: StageProblem
    apply: callable  # values -> config dict


def _theta_ordering(cfg: Mapping, free: Sequence[str], enabled: bool):
    """Re-parameterize the two x1 thetas as (low level, gap) when both are free."""
    labels = tuple(cfg["model"]["rate_regimes"])
    if not enabled or len(labels) != 2:
        return None
    paths = [f"model.factors.x1.{lbl}.theta" for lbl in labels]
    if not all(p in free for p in paths):
        return None
    thetas = [get_param(cfg, p) for p in paths]
    low, high = (0, 1) if thetas[0] <= thetas[1] else (1, 0)
    return {"low_path": paths[low], "high_path": paths[high],
            "low0": thetas[low], "gap0": max(thetas[high] - thetas[low], 1e-6)}


def rate_stage_problem(cfg: Mapping, yields: np.ndarray) -> RateStage:
    """First-stage problem: rate-block likelihood over the configured free
    parameter paths."""
    ecfg = cfg.get("estimate_rates", {})
    free = list(ecfg.get("free", []))
    if not free:
        raise ValueError("estimate_rates.free lists no parameters")
    ordering = _theta_ordering(cfg, free, ecfg.get("order_theta", True))

    names: list[str] = []
    specs: list[ParamSpec] = []
    init: list[float] = []
    for path in free:
        if ordering and path == ordering["low_path"]:
            names.append("x1.theta.low")
            specs.append(ParamSpec("x1.theta.low", "log"))
            init.append(ordering["low0"])
        elif ordering and path == ordering["high_path"]:
            names.append("x1.theta.gap")
            specs.append(ParamSpec("x1.theta.gap", "log"))
            init.append(ordering["gap0"])
        else:
            names.append(path)
            specs.append(ParamSpec(path, default_transform(path)))
            init.append(float(get_param(cfg, path)))

    def apply(values: np.ndarray) -> dict:
        by_name = dict(zip(names, (float(v) for v in values)))
        overrides = {k: v for k, v in by_name.items() if not k.startswith("x1.theta.")}
        if ordering is not None and "x1.theta.low" in by_name:
            low_val = by_name["x1.theta.low"]
            overrides[ordering["low_path"]] = low_val
            overrides[ordering["high_path"]] = low_val + by_name["x1.theta.gap"]
        return with_overrides(cfg, overrides)

    def loglik(values: np.ndarray) -> float:
        model = build_model(apply(values))
        return rate_block_filter(yields, model).loglik

    def per_date(values: np.ndarray) -> np.ndarray:
        model = build_model(apply(values))
        return rate_block_filter(yields, model).loglik_contributions

    problem = StageProblem(params=ParamVector(specs), init=np.array(init), loglik=loglik,
                           per_date=per_date)
    return RateStage(problem=problem, apply=apply)


def credit_stage_problem(cfg: Mapping, yields: np.ndarray, summaries) -> RateStage:
    """Second-stage problem: credit-block likelihood conditional on the
    injected first-stage summaries (treated as fixed generated regressors)."""
    ecfg = cfg.get("estimate_credit", {})
    free = list(ecfg.get("free", []))
    if not free:
        raise ValueError("estimate_credit.free lists no parameters")
    specs = [ParamSpec(path, default_transform(path)) for path in free]
    init = np.array([float(get_param(cfg, path)) for path in free])

    def apply(values: np.ndarray) -> dict:
        return with_overrides(cfg, dict(zip(free, (float(v) for v in values))))

    def loglik(values: np.ndarray) -> float:
        model = build_model(apply(values))
        return credit_block_filter(yields, model, summaries).loglik

    def per_date(values: np.ndarray) -> np.ndarray:
        model = build_model(apply(values))
        return credit_block_filter(yields, model, summaries).loglik_contributions

    problem = StageProblem(params=ParamVector(specs), init=init, loglik=loglik, per_date=per_date)
    return RateStage(problem=problem, apply=apply)


def joint_per_date(cfg: Mapping, rate_yields: np.ndarray, credit_yields: np.ndarray,
                   rate_free: Sequence[str], credit_free: Sequence[str]):
    """Per-date contributions of the summed two-stage likelihood as a
    function of the stacked (rate, credit) parameter values.

    Perturbing a first-stage parameter reruns the first-stage filter and
    rebuilds the injected summaries before the second stage, so
    finite-difference sandwich covariances on the stacked vector carry the
    generated-regressor correction automatically.
    """
    rate_free = list(rate_free)
    credit_free = list(credit_free)

    def per_date(values: np.ndarray) -> np.ndarray:
        overrides = dict(zip(rate_free + credit_free, (float(v) for v in values)))
        model = build_model(with_overrides(cfg, overrides))
        rate_res = rate_block_filter(rate_yields, model)
        credit_res = credit_block_filter(credit_yields, model, rate_res.summaries)
        return rate_res.loglik_contributions + credit_res.loglik_contributions

    specs = [ParamSpec(p, default_transform(p)) for p in rate_free + credit_free]
    return ParamVector(specs), per_date
