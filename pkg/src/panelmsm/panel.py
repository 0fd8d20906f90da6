"""Panel data container and deterministic column transforms.

The panel lives in long format: one row per (unit, time) pair, sorted by unit
then time, with NaN as the missing marker. Time indices are dense integers per
unit; calendar handling happens at ingestion, never here. All transforms
return new datasets and never mutate their input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ValidationError

_REQUIRED = ("unit", "time")


def _is_sorted(unit: np.ndarray, time: np.ndarray) -> bool:
    if len(unit) < 2:
        return True
    u0, u1 = unit[:-1], unit[1:]
    t0, t1 = time[:-1], time[1:]
    return bool(np.all((u1 > u0) | ((u1 == u0) & (t1 > t0))))


@dataclass(frozen=True)
class PanelDataset:
    """Rectangular unit-by-time panel plus grouping metadata.

    Parameters
    ----------
    frame : pd.DataFrame
        Long-format data. Must contain 'unit' and 'time' columns; 'time' must
        be integral. Re-sorted by (unit, time) if not already sorted.
    cluster_col : str
        Column defining bootstrap clusters. Defaults to the unit itself.
    province_col : str, optional
        Coarser grouping identifier, available as an alternative
        fixed-effect level.
    """

    frame: pd.DataFrame
    cluster_col: str = "unit"
    province_col: str | None = None

    def __post_init__(self) -> None:
        f = self.frame
        for key in _REQUIRED:
            if key not in f.columns:
                raise ValidationError(f"panel frame is missing the '{key}' column")
        t = f["time"].to_numpy()
        if not np.issubdtype(t.dtype, np.integer):
            if np.any(~np.isfinite(t)) or np.any(t != np.floor(t)):
                raise ValidationError("'time' must hold finite integer values")
            f = f.assign(time=t.astype(np.int64))
        if self.cluster_col not in f.columns:
            raise ValidationError(f"cluster column '{self.cluster_col}' not found")
        if self.province_col is not None and self.province_col not in f.columns:
            raise ValidationError(f"province column '{self.province_col}' not found")
        if not _is_sorted(f["unit"].to_numpy(), f["time"].to_numpy()):
            f = f.sort_values(["unit", "time"], kind="mergesort")
        if f is not self.frame or not f.index.equals(pd.RangeIndex(len(f))):
            f = f.reset_index(drop=True)
            object.__setattr__(self, "frame", f)

    @property
    def columns(self) -> list[str]:
        return list(self.frame.columns)

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    @property
    def n_units(self) -> int:
        return int(self.frame["unit"].nunique())

    def unit_codes(self) -> np.ndarray:
        """Integer code per row, contiguous by construction (frame is sorted)."""
        codes, _ = pd.factorize(self.frame["unit"], sort=False)
        return codes

    def with_columns(self, new: Mapping[str, np.ndarray]) -> "PanelDataset":
        return PanelDataset(
            self.frame.assign(**new),
            cluster_col=self.cluster_col,
            province_col=self.province_col,
        )

    def require_columns(self, cols: Sequence[str]) -> None:
        missing = [c for c in cols if c not in self.frame.columns]
        if missing:
            raise ValidationError(f"columns not found in panel: {missing}")


@dataclass(frozen=True)
class ColumnRole:
    """Binding of a column name to its role in the estimation problem."""

    role: str
    name: str

    _ROLES = ("treatment", "outcome", "covariate", "cluster", "group", "time_trend")

    def __post_init__(self) -> None:
        if self.role not in self._ROLES:
            raise ValidationError(f"unknown column role '{self.role}'")


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validate_panel: missingness, coverage, and structural defects."""

    n_rows: int
    n_units: int
    missing: dict
    coverage: dict
    duplicates: list
    gap_units: list
    binary_violations: dict
    usable: bool


def validate_panel(d: PanelDataset, binary_cols: Sequence[str] = (), strict: bool = True) -> ValidationReport:
    """Check structural integrity of a panel.

    Reports per-column missingness and per-unit time coverage. Duplicate
    (unit, time) keys, within-unit time gaps, and non-binary values in a
    declared binary column are hard errors under ``strict`` (the default);
    with ``strict=False`` the defects are returned in the report with
    ``usable=False`` instead.
    """
    f = d.frame
    d.require_columns(binary_cols)
    dup_mask = f.duplicated(subset=["unit", "time"], keep=False)
    duplicates = (
        f.loc[dup_mask, ["unit", "time"]].drop_duplicates().itertuples(index=False, name=None)
    )
    duplicates = list(duplicates)

    missing = {
        c: int(f[c].isna().sum()) for c in f.columns if c not in ("unit", "time")
    }

    coverage = {}
    gap_units = []
    for unit, g in f.groupby("unit", sort=False):
        t = g["time"].to_numpy()
        tmin, tmax = int(t.min()), int(t.max())
        coverage[unit] = (tmin, tmax, len(t))
        if len(np.unique(t)) != tmax - tmin + 1:
            gap_units.append(unit)

    binary_violations = {}
    for c in binary_cols:
        v = f[c].to_numpy(dtype=float)
        bad = np.isfinite(v) & (v != 0) & (v != 1)
        if bad.any():
            binary_violations[c] = int(bad.sum())

    usable = not duplicates and not gap_units and not binary_violations
    report = ValidationReport(
        n_rows=len(f),
        n_units=d.n_units,
        missing=missing,
        coverage=coverage,
        duplicates=duplicates,
        gap_units=gap_units,
        binary_violations=binary_violations,
        usable=usable,
    )
    if strict and not usable:
        problems = []
        if duplicates:
            problems.append(f"duplicate (unit, time) keys: {duplicates[:5]}")
        if gap_units:
            problems.append(f"units with time gaps: {gap_units[:5]}")
        if binary_violations:
            problems.append(f"non-binary values in binary columns: {binary_violations}")
        raise ValidationError("; ".join(problems))
    return report


def shift_within_units(values: np.ndarray, unit_key: np.ndarray, k: int) -> np.ndarray:
    """Shift a row-aligned array by k positions without crossing unit boundaries.

    Assumes rows are sorted by (unit, time) and gap-free within unit, which
    validate_panel enforces; under that contract a shift by k rows is a shift
    by k periods. Positions whose source row belongs to a different unit (or
    falls off the array) become NaN. Negative k shifts forward (a lead).
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    out = np.full(n, np.nan)
    if k == 0:
        return values.copy()
    m = abs(k)
    if m >= n:
        return out
    if k > 0:
        out[m:] = values[:-m]
        out[m:][unit_key[m:] != unit_key[:-m]] = np.nan
    else:
        out[:-m] = values[m:]
        out[:-m][unit_key[:-m] != unit_key[m:]] = np.nan
    return out


def build_lag(d: PanelDataset, col: str, k: int) -> PanelDataset:
    """Add a lagged (k > 0) or led (k < 0) copy of a column.

    The new column is named ``{col}_lag_{k}`` or ``{col}_lead_{-k}`` and is
    missing where the shifted period falls outside the unit's observed range.
    """
    d.require_columns([col])
    if k == 0:
        raise ValidationError("lag length must be nonzero; use k < 0 for leads")
    name = f"{col}_lag_{k}" if k > 0 else f"{col}_lead_{-k}"
    shifted = shift_within_units(d.frame[col].to_numpy(dtype=float), d.unit_codes(), k)
    return d.with_columns({name: shifted})


def binarize_any(d: PanelDataset, count_col: str, name: str | None = None) -> PanelDataset:
    """Add a 0/1 column marking rows where a nonnegative count is positive."""
    d.require_columns([count_col])
    v = d.frame[count_col].to_numpy(dtype=float)
    if np.any(v[np.isfinite(v)] < 0):
        raise ValidationError(f"'{count_col}' holds negative counts; cannot binarize")
    out = np.where(np.isfinite(v), (v > 0).astype(float), np.nan)
    return d.with_columns({name or f"{count_col}_any": out})


def cumulative_sum(d: PanelDataset, col: str, name: str | None = None) -> PanelDataset:
    """Add the within-unit running sum of a binary column.

    A missing input cell makes the running sum missing from that period on
    (within the unit); sums restart at every unit boundary.
    """
    d.require_columns([col])
    v = d.frame[col].to_numpy(dtype=float)
    finite = v[np.isfinite(v)]
    if np.any((finite != 0) & (finite != 1)):
        raise ValidationError(f"'{col}' must be binary to accumulate")
    out = np.empty_like(v)
    codes = d.unit_codes()
    starts = np.flatnonzero(np.r_[True, codes[1:] != codes[:-1]])
    stops = np.r_[starts[1:], len(v)]
    for a, b in zip(starts, stops):
        out[a:b] = np.cumsum(v[a:b])
    return d.with_columns({name or f"{col}_cum": out})


def complete_case_filter(d: PanelDataset, cols: Sequence[str]) -> tuple[PanelDataset, int]:
    """Drop rows with any missing value among ``cols``; report how many went."""
    d.require_columns(cols)
    if not cols:
        return d, 0
    mask = d.frame[list(cols)].notna().all(axis=1).to_numpy()
    removed = int((~mask).sum())
    if removed == 0:
        return d, 0
    kept = d.frame.loc[mask].reset_index(drop=True)
    return (
        PanelDataset(kept, cluster_col=d.cluster_col, province_col=d.province_col),
        removed,
    )
