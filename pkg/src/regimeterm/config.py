"""Run configuration: strict schema validation and model construction.

Configs are YAML mappings validated against a nested schema that rejects
unknown keys.  `build_model` turns the validated mapping into a FullModel;
`set_param` applies dotted-path overrides (used by estimation stages), and
`config_hash` fingerprints the canonical JSON form for run manifests.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .affine import GcirParams
from .model import FactorDynamics, FullModel
from .ratings import (
    RatingGenerator,
    adjust_default_intensity,
    embed_generator,
    normalize_rows,
    rating_model,
)
from .regimes import CtmcGenerator


class ConfigError(ValueError):
    pass


_NUM = (int, float)
_FACTOR_FIELDS = {"kappa": _NUM, "theta": _NUM, "alpha": _NUM, "beta": _NUM, "lambda": _NUM}

#: nested schema: dict -> allowed keys ("*" matches any string key), type
#: tuples for leaves, list entries described by a single-element list
SCHEMA: dict[str, Any] = {
    "seed": _NUM,
    "output": str,
    "grid": {"delta_weeks": _NUM, "maturities": [_NUM]},
    "model": {
        "rate_regimes": [str],
        "credit_regimes": [str],
        "rate_chain": [[_NUM]],
        "credit_chain": [[_NUM]],
        "factors": {"x1": {"*": _FACTOR_FIELDS}, "x2": {"*": _FACTOR_FIELDS},
                    "x3": {"*": _FACTOR_FIELDS}, "x4": {"*": _FACTOR_FIELDS}},
        "passthrough": [[_NUM]],
        "noise": {"rate": {"*": {"CGB": _NUM, "CDB": _NUM}}, "credit": {"*": _NUM}},
        "observed_ratings": [str],
        "correlation": [[_NUM]],
    },
    "ratings": {
        "labels": [str],
        "transition_q": [[_NUM]],
        "transition_p": [[_NUM]],
        "delta_nu": [_NUM],
        "recovery": _NUM,
        "counts_csv": str,
        "bucket_map": {"*": str},
    },
    "simulate": {"weeks": _NUM, "substeps": _NUM, "include_credit": bool, "noise_scale": _NUM,
                 "start_date": str},
    "hmm": {"k_values": [_NUM], "restarts": _NUM, "covariance": str, "segments": [str],
            "max_iter": _NUM},
    "estimate_rates": {"free": [str], "starts": _NUM, "max_iter": _NUM, "perturb": _NUM,
                       "order_theta": bool},
    "estimate_credit": {"free": [str], "starts": _NUM, "max_iter": _NUM, "perturb": _NUM},
    "price": {"ratings": [str], "max_terms": _NUM, "dates": [str]},
    "bootstrap": {"block_len": _NUM, "reps": _NUM},
}


def _validate(node: Any, schema: Any, path: str, errors: list[str]) -> None:
    if isinstance(schema, dict):
        if not isinstance(node, Mapping):
            errors.append(f"{path}: expected a mapping")
            return
        for key, value in node.items():
            if key in schema:
                _validate(value, schema[key], f"{path}.{key}", errors)
            elif "*" in schema:
                _validate(value, schema["*"], f"{path}.{key}", errors)
            else:
                errors.append(f"{path}.{key}: unknown key")
    elif isinstance(schema, list):
        if not isinstance(node, (list, tuple)):
            errors.append(f"{path}: expected a list")
            return
        for i, item in enumerate(node):
            _validate(item, schema[0], f"{path}[{i}]", errors)
    else:
        if schema is bool:
            ok = isinstance(node, bool)
        elif schema is str:
            ok = isinstance(node, str)
        else:
            ok = isinstance(node, schema) and not isinstance(node, bool)
        if not ok:
            errors.append(f"{path}: expected {schema}, got {type(node).__name__}")


def validate_config(cfg: Mapping) -> None:
    errors: list[str] = []
    _validate(cfg, SCHEMA, "config", errors)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))


def load_config(path) -> dict:
    with open(Path(path), "r", encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    validate_config(cfg)
    return cfg


def config_hash(cfg: Mapping) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def set_param(cfg: dict, path: str, value: float) -> None:
    """Apply a dotted-path override in place; integer segments index lists."""
    keys = path.split(".")
    node: Any = cfg
    for key in keys[:-1]:
        node = node[int(key)] if isinstance(node, list) else node[key]
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        if last not in node:
            raise ConfigError(f"unknown parameter path {path!r}")
        node[last] = value
    return None


def get_param(cfg: Mapping, path: str) -> float:
    node: Any = cfg
    for key in path.split("."):
        node = node[int(key)] if isinstance(node, list) else node[key]
    return node


def with_overrides(cfg: Mapping, overrides: Mapping[str, float]) -> dict:
    out = copy.deepcopy(dict(cfg))
    for path, value in overrides.items():
        set_param(out, path, float(value))
    return out


def default_transform(path: str) -> str:
    """Transform tag for a parameter path: positives optimize on a log scale."""
    leaf = path.split(".")[-1]
    if leaf in ("kappa", "theta", "alpha", "beta"):
        return "log"
    if ".noise." in path or "chain" in path:
        return "log"
    return "identity"


def build_rating_model(cfg: Mapping):
    rcfg = cfg.get("ratings")
    if not rcfg:
        return None
    labels = tuple(rcfg.get("labels", ("AAA", "AA+", "AA", "AA-", "SG", "D")))
    if "transition_q" in rcfg:
        pq = normalize_rows(np.array(rcfg["transition_q"], dtype=float), labels=labels, measure="Q")
    else:
        raise ConfigError("ratings config needs a transition_q matrix")
    gen = embed_generator(pq)
    if "delta_nu" in rcfg:
        gen = adjust_default_intensity(gen, np.array(rcfg["delta_nu"], dtype=float))
    return rating_model(gen)


def _as_generator(mat, labels: tuple[str, ...]) -> CtmcGenerator:
    """Generator from a config matrix; diagonals are recomputed from the
    off-diagonal intensities so estimation can override intensities freely."""
    q = np.array(mat, dtype=float)
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return CtmcGenerator(q=q, labels=labels)


def build_model(cfg: Mapping) -> FullModel:
    mcfg = cfg["model"]
    rate_labels = tuple(mcfg["rate_regimes"])
    credit_labels = tuple(mcfg["credit_regimes"])
    rate_chain = _as_generator(mcfg["rate_chain"], rate_labels)
    credit_chain = _as_generator(mcfg["credit_chain"], credit_labels)

    def factor(name: str, labels: tuple[str, ...]) -> FactorDynamics:
        fcfg = mcfg["factors"][name]
        params = {}
        prices = {}
        for lbl in labels:
            entry = fcfg[lbl]
            params[lbl] = GcirParams(
                kappa=float(entry["kappa"]), theta=float(entry["theta"]),
                alpha=float(entry["alpha"]), beta=float(entry["beta"]), measure="P",
            )
            prices[lbl] = float(entry.get("lambda", 0.0))
        return FactorDynamics(params=params, risk_price=prices)

    grid = cfg.get("grid", {})
    delta = float(grid.get("delta_weeks", 1)) / 52.0
    maturities = tuple(float(m) for m in grid.get("maturities", (1, 2, 3, 4, 5, 7, 10)))
    noise = mcfg.get("noise", {})
    rate_noise = {lbl: dict(v) for lbl, v in noise.get("rate", {}).items()}
    credit_noise = dict(noise.get("credit", {}))
    corr = np.array(mcfg["correlation"], dtype=float) if "correlation" in mcfg else None
    return FullModel(
        rate_factors=(factor("x1", rate_labels), factor("x2", rate_labels), factor("x3", rate_labels)),
        credit_factor=factor("x4", credit_labels),
        rate_chain=rate_chain,
        credit_chain=credit_chain,
        passthrough=np.array(mcfg["passthrough"], dtype=float),
        rating=build_rating_model(cfg),
        grid_delta=delta,
        maturities=maturities,
        rate_noise_sd=rate_noise,
        credit_noise_sd=credit_noise,
        observed_ratings=tuple(mcfg.get("observed_ratings", ())) or ("AAA", "AA+", "AA", "AA-"),
        corr=corr,
    )
