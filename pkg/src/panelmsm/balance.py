"""Covariate-balance and weight-health diagnostics.

All statistics take plain arrays aligned row-for-row: a covariate, a 0/1
treated indicator, and optional weights. Weighted means and variances use
group-normalized weights; the weighted variance divides by 1 - sum(nw^2),
which reduces to the usual n-1 denominator under equal weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import UndefinedSMDError, ValidationError


def _group_arrays(x, treated, weights):
    x = np.asarray(x, dtype=float)
    treated = np.asarray(treated, dtype=float)
    if weights is None:
        weights = np.ones(len(x))
    weights = np.asarray(weights, dtype=float)
    if not (len(x) == len(treated) == len(weights)):
        raise ValidationError("covariate, treatment, and weights must align")
    keep = np.isfinite(x) & np.isfinite(weights) & np.isfinite(treated)
    return x[keep], treated[keep], weights[keep]


def _weighted_moments(x: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    if len(x) == 0 or w.sum() <= 0:
        raise UndefinedSMDError("a treatment group is empty")
    nw = w / w.sum()
    mean = float(np.sum(nw * x))
    denom = 1.0 - float(np.sum(nw**2))
    if denom <= 0:
        raise UndefinedSMDError("weighted variance undefined (single effective observation)")
    var = float(np.sum(nw * (x - mean) ** 2) / denom)
    return mean, var


def smd(x, treated, weights=None) -> float:
    """Absolute standardized mean difference between treated and control.

    The pooled scale is sqrt of the average of the two group-wise weighted
    variances. Weights are normalized to sum to 1 within each group first, so
    any positive rescaling of the input weights is irrelevant.
    """
    x, t, w = _group_arrays(x, treated, weights)
    m1, v1 = _weighted_moments(x[t == 1], w[t == 1])
    m0, v0 = _weighted_moments(x[t == 0], w[t == 0])
    pooled = np.sqrt((v1 + v0) / 2.0)
    if not np.isfinite(pooled) or pooled == 0:
        raise UndefinedSMDError("pooled variance is zero; SMD undefined")
    return abs(m1 - m0) / float(pooled)


def higher_moment_balance(x, treated, weights=None) -> float:
    """SMD of the squared covariate, the variance-balance check."""
    x = np.asarray(x, dtype=float)
    return smd(x**2, treated, weights)


def ess(weights) -> tuple[float, float]:
    """Effective sample size of a weighted sample: (sum w)^2 / sum w^2.

    Returns the absolute ESS and its percentage of the actual sample size.
    """
    w = np.asarray(weights, dtype=float)
    w = w[np.isfinite(w)]
    if w.size == 0:
        raise ValidationError("cannot compute ESS of an empty weight vector")
    if np.any(w <= 0):
        raise ValidationError("ESS needs strictly positive weights")
    absolute = float(w.sum() ** 2 / np.sum(w**2))
    return absolute, 100.0 * absolute / w.size


def overlap_coefficient(ps_treated, ps_control, bins: int = 50) -> float:
    """Overlap of the two propensity-score histograms, in percent.

    Uses equal-width bins over the pooled score range and sums the smaller of
    the two densities per bin times the bin width.
    """
    pt = np.asarray(ps_treated, dtype=float)
    pc = np.asarray(ps_control, dtype=float)
    pt, pc = pt[np.isfinite(pt)], pc[np.isfinite(pc)]
    if pt.size == 0 or pc.size == 0:
        raise ValidationError("both groups need propensity scores for overlap")
    lo = min(pt.min(), pc.min())
    hi = max(pt.max(), pc.max())
    if hi == lo:
        return 100.0
    dens_t, edges = np.histogram(pt, bins=bins, range=(lo, hi), density=True)
    dens_c, _ = np.histogram(pc, bins=bins, range=(lo, hi), density=True)
    width = (hi - lo) / bins
    return float(np.clip(np.minimum(dens_t, dens_c).sum() * width * 100.0, 0.0, 100.0))


def _weighted_quantile(x: np.ndarray, w: np.ndarray, q: float) -> float:
    # inverted-CDF convention: smallest x whose cumulative share reaches q
    order = np.argsort(x, kind="mergesort")
    xs, ws = x[order], w[order]
    cum = np.cumsum(ws) / ws.sum()
    return float(xs[np.searchsorted(cum, q, side="left")])


def weighted_distribution_summary(
    x, treated, weights=None, max_ecdf_points: int = 1000
) -> dict:
    """Weighted quartiles and an ECDF grid per group, for table export.

    The ECDF is evaluated at the distinct observed values, uniformly thinned
    beyond max_ecdf_points. No rendering happens here.
    """
    x, t, w = _group_arrays(x, treated, weights)
    out = {}
    for flag, name in ((1, "treated"), (0, "control")):
        xg, wg = x[t == flag], w[t == flag]
        if len(xg) == 0:
            raise ValidationError(f"{name} group is empty")
        quartiles = {
            f"q{int(q * 100)}": _weighted_quantile(xg, wg, q) for q in (0.25, 0.5, 0.75)
        }
        values = np.unique(xg)
        shares = []
        total = wg.sum()
        order = np.argsort(xg, kind="mergesort")
        xs, ws = xg[order], wg[order]
        cum = np.cumsum(ws) / total
        idx = np.searchsorted(xs, values, side="right") - 1
        shares = cum[idx]
        if len(values) > max_ecdf_points:
            pick = np.unique(np.linspace(0, len(values) - 1, max_ecdf_points).astype(int))
            values, shares = values[pick], shares[pick]
        out[name] = {**quartiles, "ecdf_values": values, "ecdf_shares": shares}
    return out


@dataclass(frozen=True)
class BalanceReport:
    """Balance table plus weight-health numbers for one weighting scheme."""

    rows: list  # dicts: name, smd_unweighted, smd_weighted_raw, smd_weighted_truncated, smd_squared_covariate
    ess_percent: float
    weight_stats: dict  # mean/min/max of raw weights (plus truncated extremes)
    overlap_percent: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


def balance_report(
    covariate_arrays: dict,
    treated: np.ndarray,
    raw_weights: np.ndarray,
    truncated_weights: np.ndarray,
    ps_treated: np.ndarray,
    ps_control: np.ndarray,
    overlap_bins: int = 50,
) -> BalanceReport:
    """Assemble the per-covariate SMD table and weight diagnostics.

    Inputs are aligned to the estimation sample (rows actually weighted in
    the outcome model). Raw weight stats are pre-truncation by convention;
    truncated extremes ride along in weight_stats.
    """
    rows = []
    for name, x in covariate_arrays.items():
        rows.append(
            {
                "name": name,
                "smd_unweighted": smd(x, treated),
                "smd_weighted_raw": smd(x, treated, raw_weights),
                "smd_weighted_truncated": smd(x, treated, truncated_weights),
                "smd_squared_covariate": higher_moment_balance(x, treated, truncated_weights),
            }
        )
    finite_raw = raw_weights[np.isfinite(raw_weights)]
    finite_trunc = truncated_weights[np.isfinite(truncated_weights)]
    _, ess_pct = ess(finite_trunc)
    stats = {
        "mean": float(finite_raw.mean()),
        "min": float(finite_raw.min()),
        "max": float(finite_raw.max()),
        "mean_truncated": float(finite_trunc.mean()),
        "min_truncated": float(finite_trunc.min()),
        "max_truncated": float(finite_trunc.max()),
    }
    return BalanceReport(
        rows=rows,
        ess_percent=ess_pct,
        weight_stats=stats,
        overlap_percent=overlap_coefficient(ps_treated, ps_control, bins=overlap_bins),
    )
