"""Panel assembly for the event-study fits.

Counts and volumes are log(1 + f) transformed; every fitting table is
z-scored per metric over exactly the rows entering that fit, so
coefficients are in within-table standard deviations.  Each row carries
the set's baseline size control log(1 + n_members) and its anchor
calendar week.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .cohort import SocializationSet
from .errors import DataError, ModelError
from .metrics import ALL_METRICS

# metrics on a count/volume scale; the rest are already bounded ratios
LOG_METRICS = frozenset(
    {"volume", "connections", "n_active", "volume_ind", "connections_ind"}
)

PANEL_COLUMNS = (
    "set_id",
    "ego",
    "t_star",
    "treated",
    "t",
    "metric",
    "y",
    "log1p_size",
    "anchor_week",
)


def transform_target(metric: str, values: np.ndarray) -> np.ndarray:
    """log(1 + f) for count-like metrics, identity otherwise."""
    values = np.asarray(values, dtype=np.float64)
    if metric in LOG_METRICS:
        if np.any(values < 0):
            raise DataError(f"negative values for count metric {metric!r}")
        return np.log1p(values)
    return values


def assemble_panel(
    series: pd.DataFrame, sets: Iterable[SocializationSet]
) -> tuple[pd.DataFrame, dict]:
    """Metric series -> modelling panel.

    Applies the per-metric transform, attaches set-level controls, and
    drops rows with missing values (counted in the diagnostics).  A
    duplicated (set, t, metric) observation is a data error.
    """
    size_by_set = {s.set_id: len(s.members) for s in sets}
    df = series.copy()
    missing_sets = set(df["set_id"]) - set(size_by_set)
    if missing_sets:
        raise DataError(f"series references unknown sets: {sorted(missing_sets)[:5]}")

    dup = df.duplicated(subset=["set_id", "t", "metric"])
    if dup.any():
        first = df.loc[dup, ["set_id", "t", "metric"]].iloc[0]
        raise DataError(
            "duplicate observation for "
            f"({first['set_id']}, t={first['t']}, {first['metric']})"
        )

    n_before = len(df)
    df = df[np.isfinite(df["value"])].copy()
    n_dropped = n_before - len(df)

    df["y"] = 0.0
    for metric, idx in df.groupby("metric", sort=False).groups.items():
        df.loc[idx, "y"] = transform_target(str(metric), df.loc[idx, "value"].to_numpy())
    df["log1p_size"] = np.log1p(df["set_id"].map(size_by_set).to_numpy(dtype=np.float64))
    df["anchor_week"] = df["t_star"].astype(np.float64)
    df["treated"] = df["treated"].astype(bool)

    out = df[list(PANEL_COLUMNS)].reset_index(drop=True)
    diag = {
        "rows": len(out),
        "dropped_missing": n_dropped,
        "sets": out["set_id"].nunique(),
        "metrics": sorted(out["metric"].unique()),
    }
    return out, diag


def fitting_table(
    panel: pd.DataFrame, metric: str, mask: pd.Series | np.ndarray | None = None
) -> pd.DataFrame:
    """Rows of one metric (optionally filtered), with y z-scored in place.

    A zero-variance target is centered only; the fit then sees a constant
    zero response.
    """
    sub = panel if mask is None else panel[np.asarray(mask)]
    sub = sub[sub["metric"] == metric].copy()
    if len(sub) == 0:
        raise ModelError(f"empty fitting table for metric {metric!r}")
    y = sub["y"].to_numpy(dtype=np.float64)
    mu, sd = y.mean(), y.std()
    sub["y"] = (y - mu) / sd if sd > 0 else y - mu
    return sub


@dataclass(frozen=True)
class PeriodSplit:
    """Two-period comparison around a calendar cutoff week.

    Sets whose anchor lies within ``buffer`` weeks of the cutoff belong to
    neither period.
    """

    cutoff_week: int
    buffer: int = 4

    def assign(self, t_star: np.ndarray | pd.Series) -> np.ndarray:
        """'early', 'late', or 'excluded' per anchor week."""
        t_star = np.asarray(t_star)
        out = np.where(
            t_star < self.cutoff_week - self.buffer,
            "early",
            np.where(t_star > self.cutoff_week + self.buffer, "late", "excluded"),
        )
        return out


def split_panel(panel: pd.DataFrame, split: PeriodSplit) -> dict[str, pd.DataFrame]:
    """Early/late sub-panels; the buffer zone is dropped."""
    period = split.assign(panel["t_star"].to_numpy())
    return {
        "early": panel[period == "early"].reset_index(drop=True),
        "late": panel[period == "late"].reset_index(drop=True),
    }


def panel_metrics(panel: pd.DataFrame) -> list[str]:
    present = set(panel["metric"].unique())
    return [m for m in ALL_METRICS if m in present]


def write_panel(panel: pd.DataFrame, path) -> None:
    panel.to_csv(path, index=False, float_format="%.9g")


def read_panel(path) -> pd.DataFrame:
    df = pd.read_csv(path)
    missing = set(PANEL_COLUMNS) - set(df.columns)
    if missing:
        raise DataError(f"panel missing columns: {sorted(missing)}")
    df["treated"] = df["treated"].astype(bool)
    return df
