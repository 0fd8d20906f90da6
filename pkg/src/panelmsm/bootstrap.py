"""Pairs clustered bootstrap over any full-pipeline estimator closure.

Each replicate resamples whole clusters with replacement and relabels every
draw to a fresh identity, so a cluster drawn twice contributes two distinct
fixed-effect groups. The estimator re-runs end to end on each resampled
panel. Replicate RNG streams are spawned from the seed by replicate index,
so results are reproducible and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd
from scipy import stats

from .errors import InferenceError, ValidationError
from .panel import PanelDataset


@dataclass(frozen=True)
class BootstrapResult:
    """Replicate estimates and the statistics derived from them."""

    estimate: float
    replicates: np.ndarray
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    n_failed: int
    failures: list

    @property
    def ci(self) -> tuple[float, float]:
        return (self.ci_low, self.ci_high)


def _normal_p(estimate: float, se: float) -> float:
    if not np.isfinite(se) or se == 0:
        return 1.0 if estimate == 0 else 0.0
    return float(2.0 * stats.norm.sf(abs(estimate) / se))


def _cluster_segments(f: pd.DataFrame, col: str) -> list[np.ndarray]:
    values = f[col].to_numpy()
    _, codes = np.unique(values, return_inverse=True)
    n_c = codes.max() + 1 if len(codes) else 0
    if n_c < 2:
        raise ValidationError("need at least two clusters to bootstrap")
    order = np.argsort(codes, kind="mergesort")
    sorted_codes = codes[order]
    starts = np.searchsorted(sorted_codes, np.arange(n_c), side="left")
    stops = np.searchsorted(sorted_codes, np.arange(n_c), side="right")
    return [order[a:b] for a, b in zip(starts, stops)]


def _resample(
    f: pd.DataFrame,
    segments: list[np.ndarray],
    col: str,
    province_col: str | None,
    rng: np.random.Generator,
) -> PanelDataset:
    n_c = len(segments)
    draw = rng.integers(0, n_c, size=n_c)
    rows = np.concatenate([segments[i] for i in draw])
    slot_sizes = np.array([len(segments[i]) for i in draw])
    slot_of_row = np.repeat(np.arange(n_c), slot_sizes)

    new = f.iloc[rows].reset_index(drop=True)
    if col == "unit":
        new["unit"] = slot_of_row
    else:
        # units nested in a coarser cluster keep distinct identities per draw
        unit_codes = pd.factorize(new["unit"], sort=False)[0]
        n_u = unit_codes.max() + 1
        new["unit"] = slot_of_row * (n_u + 1) + unit_codes
        new[col] = slot_of_row
    return PanelDataset(new, cluster_col=col, province_col=province_col)


def resample_clusters(
    d: PanelDataset, rng: np.random.Generator, cluster_col: str | None = None
) -> PanelDataset:
    """One pairs resample: draw clusters with replacement, relabel uniquely."""
    col = cluster_col or d.cluster_col
    d.require_columns([col])
    segments = _cluster_segments(d.frame, col)
    return _resample(d.frame, segments, col, d.province_col, rng)


def pairs_cluster_bootstrap(
    estimator: Callable[[PanelDataset], float],
    d: PanelDataset,
    cluster_col: str | None = None,
    B: int = 500,
    seed: int | None = None,
    max_failure_share: float = 0.2,
) -> BootstrapResult:
    """Bootstrap SE, percentile CI, and normal-approximation p-value.

    The estimator maps a PanelDataset to one real number and is expected to
    re-run its whole pipeline. A failing replicate is recorded and skipped;
    more than max_failure_share of them is an InferenceError. Identical
    (data, B, seed) always reproduce identical output.
    """
    if seed is None:
        raise ValidationError("bootstrap seed is mandatory")
    if B < 1:
        raise ValidationError("B must be at least 1")
    col = cluster_col or d.cluster_col
    d.require_columns([col])
    estimate = float(estimator(d))
    segments = _cluster_segments(d.frame, col)
    children = np.random.SeedSequence(seed).spawn(B)
    replicates = []
    failures = []
    for b in range(B):
        rng = np.random.default_rng(children[b])
        try:
            res = _resample(d.frame, segments, col, d.province_col, rng)
            replicates.append(float(estimator(res)))
        except Exception as exc:  # noqa: BLE001  (estimator closures vary)
            failures.append((b, f"{type(exc).__name__}: {exc}"))
    if len(failures) > max_failure_share * B:
        raise InferenceError(
            f"{len(failures)} of {B} bootstrap replicates failed; "
            f"first failure: {failures[0][1]}"
        )
    reps = np.asarray(replicates)
    se = float(np.std(reps, ddof=1)) if len(reps) > 1 else float("nan")
    if len(reps):
        lo, hi = np.percentile(reps, [2.5, 97.5])
    else:
        lo = hi = float("nan")
    return BootstrapResult(
        estimate=estimate,
        replicates=reps,
        se=se,
        ci_low=float(lo),
        ci_high=float(hi),
        p_value=_normal_p(estimate, se),
        n_failed=len(failures),
        failures=failures,
    )
