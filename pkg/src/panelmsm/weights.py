"""Stabilized, windowed, truncated inverse-probability-of-treatment weights.

Weights multiply, over a trailing window of periods, the ratio of two fitted
probabilities of the observed treatment: a baseline (numerator) model using
treatment history, unit identity, and a quadratic time trend, and a full
(denominator) model that adds time-varying covariates and absorbs group
fixed effects.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import pandas as pd

from . import feglm
from .errors import PositivityError, ValidationError
from .panel import PanelDataset, shift_within_units

_FE_LEVELS = ("unit", "province", "none")

# prediction clamp; spurious infinities are avoided here while genuine
# positivity violations (exact 0/1 predictions) raise PositivityError
_PROB_FLOOR = 1e-12

TREND = "time_trend"
TREND_SQ = "time_trend_sq"


@dataclass(frozen=True)
class WeightConfig:
    """Weight-construction knobs.

    k is the number of trailing periods in the window product (the window has
    k + 1 terms including the current period). lower_pct/upper_pct are the
    winsorization percentiles; 1/99 is the default, 5/95 the aggressive
    preset. fe_level picks the denominator's absorbed grouping.
    covariates are pre-built denominator columns (lags, squares and the like
    are built upstream).
    """

    k: int = 4
    lower_pct: float = 1.0
    upper_pct: float = 99.0
    fe_level: str = "unit"
    treatment_lags: int = 3
    covariates: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.k < 0:
            raise ValidationError("window length k must be nonnegative")
        if not (0 <= self.lower_pct < self.upper_pct <= 100):
            raise ValidationError("need 0 <= lower_pct < upper_pct <= 100")
        if self.fe_level not in _FE_LEVELS:
            raise ValidationError(f"fe_level must be one of {_FE_LEVELS}")
        if self.treatment_lags < 1:
            raise ValidationError("treatment models need at least one lag")


@dataclass(frozen=True)
class WeightSeries:
    """Per-(unit, time) weights plus their construction provenance."""

    table: pd.DataFrame  # columns: unit, time, raw, truncated (NaN until truncation)
    provenance: dict

    @property
    def raw(self) -> np.ndarray:
        return self.table["raw"].to_numpy()

    @property
    def truncated(self) -> np.ndarray:
        return self.table["truncated"].to_numpy()


def add_time_trend(d: PanelDataset) -> PanelDataset:
    """Ensure quadratic time-trend columns exist (idempotent)."""
    new = {}
    t = d.frame["time"].to_numpy(dtype=float)
    if TREND not in d.frame.columns:
        new[TREND] = t
    if TREND_SQ not in d.frame.columns:
        new[TREND_SQ] = t**2
    return d.with_columns(new) if new else d


def treatment_lag_names(treatment: str, n_lags: int) -> list[str]:
    return [f"{treatment}_lag_{i}" for i in range(1, n_lags + 1)]


def fit_treatment_models(
    d: PanelDataset, treatment: str, cfg: WeightConfig
) -> tuple[feglm.FitResult, feglm.FitResult]:
    """Fit the numerator and denominator treatment-probability models.

    Expects treatment-lag and covariate columns to be built and the dataset
    complete-case filtered on them. The numerator conditions on treatment
    history, the unit identity, and a quadratic time trend; the denominator
    adds the configured covariates and absorbs fe_level fixed effects. With
    fe_level "none" the unit identity drops out of the numerator too, so the
    numerator never conditions on more than the denominator.
    """
    d = add_time_trend(d)
    lags = treatment_lag_names(treatment, cfg.treatment_lags)
    trend = [TREND, TREND_SQ]
    d.require_columns([treatment, *lags, *cfg.covariates])

    if cfg.fe_level == "none":
        num_fe = den_fe = None
    elif cfg.fe_level == "unit":
        num_fe = den_fe = "unit"
    else:
        if d.province_col is None:
            raise ValidationError("fe_level 'province' needs a province column")
        num_fe, den_fe = "unit", d.province_col

    num_spec = feglm.ModelSpec(
        response=treatment, terms=(*lags, *trend), family="logistic", fe_group=num_fe
    )
    den_spec = feglm.ModelSpec(
        response=treatment,
        terms=(*lags, *cfg.covariates, *trend),
        family="logistic",
        fe_group=den_fe,
    )
    return feglm.fit(d, num_spec), feglm.fit(d, den_spec)


def observed_probability(p_treat: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Probability of the treatment actually received: p if t=1 else 1-p."""
    return np.where(t == 1, p_treat, 1.0 - p_treat)


def stabilized_weights(
    d: PanelDataset,
    num_fit: feglm.FitResult,
    den_fit: feglm.FitResult,
    cfg: WeightConfig,
    treatment: str | None = None,
    stabilize: bool = True,
) -> WeightSeries:
    """Window product of numerator/denominator observed-treatment probabilities.

    The weight at (i, j) multiplies the per-period ratios over periods
    j-k .. j and is missing wherever any window term is missing, including
    every position whose window reaches before the unit's usable history.
    stabilize=False is a debug path with the numerator replaced by 1.
    """
    treatment = treatment or den_fit.spec.response
    d = add_time_trend(d)
    d.require_columns([treatment])
    t = d.frame[treatment].to_numpy(dtype=float)

    p_den = feglm.predict(den_fit, d)
    exact = np.isfinite(p_den) & ((p_den == 0.0) | (p_den == 1.0))
    if exact.any():
        rows = d.frame.loc[exact, ["unit", "time"]].itertuples(index=False, name=None)
        raise PositivityError(
            f"denominator model predicts probability exactly 0 or 1 at {list(rows)[:10]}"
        )
    den_obs = observed_probability(np.clip(p_den, _PROB_FLOOR, 1 - _PROB_FLOOR), t)

    if stabilize:
        p_num = feglm.predict(num_fit, d)
        num_obs = observed_probability(np.clip(p_num, _PROB_FLOOR, 1 - _PROB_FLOOR), t)
    else:
        num_obs = np.ones_like(den_obs)

    ratio = num_obs / den_obs
    codes = d.unit_codes()
    w = ratio.copy()
    for m in range(1, cfg.k + 1):
        w = w * shift_within_units(ratio, codes, m)

    table = pd.DataFrame(
        {
            "unit": d.frame["unit"],
            "time": d.frame["time"],
            "raw": w,
            "truncated": np.full(len(w), np.nan),
        }
    )
    provenance = {
        "k": cfg.k,
        "fe_level": cfg.fe_level,
        "treatment_lags": cfg.treatment_lags,
        "stabilized": stabilize,
        "lower_pct": cfg.lower_pct,
        "upper_pct": cfg.upper_pct,
        "truncated": False,
    }
    return WeightSeries(table=table, provenance=provenance)


def truncate_weights(w: WeightSeries, cfg: WeightConfig) -> WeightSeries:
    """Winsorize raw weights at the configured percentiles (no row deletion).

    Quantiles are computed with linear interpolation over all pooled
    nonmissing raw weights.
    """
    raw = w.raw
    finite = raw[np.isfinite(raw)]
    if finite.size == 0:
        raise ValidationError("no nonmissing raw weights to truncate")
    q_low, q_high = np.percentile(finite, [cfg.lower_pct, cfg.upper_pct])
    clipped = np.clip(raw, q_low, q_high)
    table = w.table.assign(truncated=clipped)
    provenance = dict(
        w.provenance,
        truncated=True,
        lower_pct=cfg.lower_pct,
        upper_pct=cfg.upper_pct,
        q_low=float(q_low),
        q_high=float(q_high),
        frac_clamped_low=float(np.mean(finite < q_low)),
        frac_clamped_high=float(np.mean(finite > q_high)),
    )
    return WeightSeries(table=table, provenance=provenance)


def normalize_weights(weights: np.ndarray, treated: np.ndarray) -> np.ndarray:
    """Scale weights to sum to 1 within the treated and control groups.

    Missing weights stay missing and do not enter the group sums.
    """
    weights = np.asarray(weights, dtype=float)
    treated = np.asarray(treated)
    out = np.full(len(weights), np.nan)
    for flag in (0, 1):
        mask = (treated == flag) & np.isfinite(weights)
        total = weights[mask].sum()
        if not mask.any() or total <= 0:
            name = "treated" if flag else "control"
            raise ValidationError(f"cannot normalize: {name} group is empty")
        out[mask] = weights[mask] / total
    return out
