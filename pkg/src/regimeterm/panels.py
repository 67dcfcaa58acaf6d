"""Weekly yield-curve panel ingestion, validation, and spread construction.

The on-disk schema is a long CSV with header `date,segment,maturity_years,yield`
(ISO dates, decimal yields: 0.0347 means 3.47%).  In memory a panel is one
segment's (dates x maturities) yield matrix with NaN marking missing points.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

SEGMENTS = ("CGB", "CDB", "AAA", "AA+", "AA", "AA-")
CSV_COLUMNS = ("date", "segment", "maturity_years", "yield")
_YIELD_BAND = (-0.05, 0.50)
_WEEKLY_TOL_DAYS = 2


class PanelError(ValueError):
    pass


class SchemaError(PanelError):
    pass


class NonWeeklyGrid(PanelError):
    pass


class MaturityMismatch(PanelError):
    pass


@dataclass(frozen=True)
class CurvePanel:
    """One segment's weekly zero-coupon yields over a maturity grid."""

    segment: str
    dates: np.ndarray          # datetime64[D], strictly increasing, weekly
    maturities: tuple[float, ...]
    yields: np.ndarray         # (T, M), decimal per annum, NaN = missing

    def __post_init__(self) -> None:
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        ys = np.array(self.yields, dtype=float)
        dates.setflags(write=False)
        ys.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "yields", ys)
        object.__setattr__(self, "maturities", tuple(float(m) for m in self.maturities))
        if ys.shape != (dates.shape[0], len(self.maturities)):
            raise SchemaError("yield matrix shape must be (dates, maturities)")
        if dates.shape[0] == 0:
            raise SchemaError("panel has no dates")
        gaps = np.diff(dates).astype("timedelta64[D]").astype(int)
        if np.any(gaps <= 0):
            raise SchemaError("dates must be strictly increasing")
        if dates.shape[0] > 1 and np.any(np.abs(gaps - 7) > _WEEKLY_TOL_DAYS):
            raise NonWeeklyGrid(
                f"dates must be weekly within +/-{_WEEKLY_TOL_DAYS} days; worst gap {gaps.max()}d"
            )
        finite = ys[np.isfinite(ys)]
        out_of_band = np.sum((finite < _YIELD_BAND[0]) | (finite > _YIELD_BAND[1]))
        if out_of_band:
            warnings.warn(
                f"{segment_name(self)}: {out_of_band} yields outside the sanity band {_YIELD_BAND}",
                stacklevel=2,
            )

    @property
    def n_dates(self) -> int:
        return self.dates.shape[0]


def segment_name(panel: CurvePanel) -> str:
    return panel.segment


def load_panels(path) -> dict[str, CurvePanel]:
    """Read every segment from a long CSV into per-segment panels."""
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype={"date": str, "segment": str})
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: file is empty") from None
    missing_cols = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing_cols:
        raise SchemaError(f"{path}: missing columns {missing_cols}")
    if df.empty:
        raise SchemaError(f"{path}: no data rows")
    dupes = df.duplicated(subset=["date", "segment", "maturity_years"], keep=False)
    if dupes.any():
        offenders = df.loc[dupes, ["date", "segment", "maturity_years"]].drop_duplicates()
        raise SchemaError(f"{path}: duplicate observations:\n{offenders.to_string(index=False)}")
    raw_yield = pd.to_numeric(df["yield"], errors="coerce")
    n_bad = int(raw_yield.isna().sum() - df["yield"].isna().sum())
    if n_bad:
        warnings.warn(f"{path}: {n_bad} unparsable yields treated as missing", stacklevel=2)
    df = df.assign(**{"yield": raw_yield})

    out: dict[str, CurvePanel] = {}
    for segment, sub in df.groupby("segment", sort=True):
        pivot = sub.pivot(index="date", columns="maturity_years", values="yield")
        pivot = pivot.sort_index()
        dates = np.array(pivot.index, dtype="datetime64[D]")
        maturities = tuple(float(m) for m in pivot.columns)
        out[str(segment)] = CurvePanel(
            segment=str(segment), dates=dates, maturities=maturities, yields=pivot.to_numpy()
        )
    return out


def ingest_panel(path, segment: str) -> CurvePanel:
    """Read one segment's panel from a long CSV."""
    panels = load_panels(path)
    if segment not in panels:
        raise SchemaError(f"{path}: segment {segment!r} not present (have {sorted(panels)})")
    return panels[segment]


def write_panels(path, panels: dict[str, CurvePanel]) -> None:
    """Write panels to the long-CSV schema (round-trips exactly)."""
    rows = []
    for segment in sorted(panels):
        panel = panels[segment]
        for i, d in enumerate(panel.dates):
            for j, m in enumerate(panel.maturities):
                y = panel.yields[i, j]
                rows.append((str(d), segment, repr(float(m)), "" if np.isnan(y) else repr(float(y))))
    df = pd.DataFrame(rows, columns=list(CSV_COLUMNS))
    df.to_csv(path, index=False)


def align_panels(a: CurvePanel, b: CurvePanel) -> tuple[CurvePanel, CurvePanel]:
    """Restrict two panels to their common dates and maturities."""
    common_m = tuple(m for m in a.maturities if m in b.maturities)
    if not common_m:
        raise MaturityMismatch(f"{a.segment} and {b.segment} share no maturities")
    common_d = np.intersect1d(a.dates, b.dates)
    ia = np.searchsorted(a.dates, common_d)
    ib = np.searchsorted(b.dates, common_d)
    ja = [a.maturities.index(m) for m in common_m]
    jb = [b.maturities.index(m) for m in common_m]
    pa = CurvePanel(a.segment, common_d, common_m, a.yields[np.ix_(ia, ja)])
    pb = CurvePanel(b.segment, common_d, common_m, b.yields[np.ix_(ib, jb)])
    return pa, pb


def build_spreads(panels: dict[str, CurvePanel]) -> dict[str, CurvePanel]:
    """Matched-maturity spreads: CDB over CGB, each rating over CDB."""
    if "CGB" not in panels or "CDB" not in panels:
        raise MaturityMismatch("spread construction needs both CGB and CDB panels")
    out: dict[str, CurvePanel] = {}
    cdb, cgb = align_panels(panels["CDB"], panels["CGB"])
    out["CDB-CGB"] = CurvePanel("CDB-CGB", cdb.dates, cdb.maturities, cdb.yields - cgb.yields)
    for segment, panel in panels.items():
        if segment in ("CGB", "CDB"):
            continue
        corp, ref = align_panels(panel, panels["CDB"])
        out[f"{segment}-CDB"] = CurvePanel(
            f"{segment}-CDB", corp.dates, corp.maturities, corp.yields - ref.yields
        )
    return out
