"""Report emission: CSV tables, JSON summaries, and SVG charts.

Charts are batch SVG line plots with shaded regime spans.  Output is byte
deterministic: matplotlib's hash salt is pinned and date metadata stripped,
and manifests record the config hash, seed, and library versions (never
wall-clock time).
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "regimeterm"
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from . import __version__
from .config import config_hash


def write_manifest(out_dir, cfg: dict, command: str, seed: int) -> Path:
    import scipy

    manifest = {
        "command": command,
        "config_sha256": config_hash(cfg),
        "seed": int(seed),
        "versions": {
            "regimeterm": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
    }
    path = Path(out_dir) / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_table(out_dir, name: str, df: pd.DataFrame) -> Path:
    path = Path(out_dir) / f"{name}.csv"
    df.to_csv(path, index=False)
    return path


def write_json(out_dir, name: str, payload: dict) -> Path:
    path = Path(out_dir) / f"{name}.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _shade_spans(ax, dates: np.ndarray, states: np.ndarray, shade_state: int) -> None:
    on = states == shade_state
    if not np.any(on):
        return
    edges = np.flatnonzero(np.diff(on.astype(int)))
    starts = [0] if on[0] else []
    starts += [int(e) + 1 for e in edges if not on[e]]
    ends = [int(e) for e in edges if on[e]]
    if on[-1]:
        ends.append(len(on) - 1)
    for s, e in zip(starts, ends):
        ax.axvspan(dates[s], dates[min(e + 1, len(dates) - 1)], color="0.85", zorder=0)


def chart_with_regimes(
    path,
    dates: np.ndarray,
    series: dict[str, np.ndarray],
    states: np.ndarray | None = None,
    shade_state: int = 1,
    ylabel: str = "yield",
    title: str | None = None,
) -> Path:
    """SVG line chart of one or more series with shaded regime episodes."""
    fig, ax = plt.subplots(figsize=(9.0, 4.0))
    x = np.asarray(dates)
    if states is not None:
        _shade_spans(ax, x, np.asarray(states), shade_state)
    for label, values in series.items():
        ax.plot(x, np.asarray(values), lw=1.0, label=label)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.autofmt_xdate()
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


def hmm_fit_table(results: dict[str, dict[int, tuple[float, float, float]]]) -> pd.DataFrame:
    """Long table of (segment, K) -> loglik / AIC / BIC."""
    rows = []
    for segment in sorted(results):
        for k in sorted(results[segment]):
            loglik, aic, bic = results[segment][k]
            rows.append((segment, k, loglik, aic, bic))
    return pd.DataFrame(rows, columns=["segment", "k", "loglik", "aic", "bic"])


def duration_table(durations: dict[str, np.ndarray]) -> pd.DataFrame:
    rows = []
    for segment in sorted(durations):
        for i, d in enumerate(durations[segment]):
            rows.append((segment, i, float(d)))
    return pd.DataFrame(rows, columns=["segment", "state", "expected_duration_years"])


def parameter_table(names: list[str], estimates: np.ndarray, ses: np.ndarray | None) -> pd.DataFrame:
    data = {"parameter": names, "estimate": [float(v) for v in estimates]}
    if ses is not None:
        data["robust_se"] = [float(s) for s in ses]
    return pd.DataFrame(data)
