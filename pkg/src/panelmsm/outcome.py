"""Weighted outcome models and effect transforms.

The marginal structural outcome model is a weighted GLM with an intercept and
treatment terms only. Covariates never enter here; all confounding control
lives in the weights. Effect transforms convert the fitted coefficients to
percentage-point incremental effects, percent changes for log outcomes, and
windowed cumulative effects. A two-way fixed-effects regression rides along
as the conventional baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import feglm
from .errors import CollinearityError, ValidationError
from .panel import PanelDataset

_MSM_WEIGHT_COL = "_msm_w"


@dataclass(frozen=True)
class OutcomeSpec:
    """Outcome model description: response, treatment terms, family, weights.

    weights is a per-row array aligned to the dataset the spec is fit on;
    None fits unweighted. Treatment terms must be binary or integer counts
    (the cumulative-treatment variant); anything else is rejected because
    covariates are not allowed in the outcome model.
    """

    outcome: str
    treatment_terms: tuple[str, ...]
    family: str = "logistic"
    weights: np.ndarray | None = None
    fractional: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "treatment_terms", tuple(self.treatment_terms))
        if not self.treatment_terms:
            raise ValidationError("outcome model needs at least one treatment term")
        if self.family not in ("logistic", "gaussian"):
            raise ValidationError(f"unknown family '{self.family}'")


def _usable_rows(d: PanelDataset, spec: OutcomeSpec) -> np.ndarray:
    cols = [spec.outcome, *spec.treatment_terms]
    d.require_columns(cols)
    mask = d.frame[cols].notna().all(axis=1).to_numpy()
    if spec.weights is not None:
        w = np.asarray(spec.weights, dtype=float)
        if len(w) != d.n_rows:
            raise ValidationError(
                f"weights length {len(w)} does not match dataset rows {d.n_rows}"
            )
        mask &= np.isfinite(w)
    return mask


def _check_treatment_terms(d: PanelDataset, spec: OutcomeSpec, mask: np.ndarray) -> None:
    for term in spec.treatment_terms:
        v = d.frame[term].to_numpy(dtype=float)[mask]
        if np.any(v != np.round(v)) or np.any(v < 0):
            raise ValidationError(
                f"'{term}' is not a binary/count treatment term; "
                "covariates are not permitted in the outcome model"
            )


def fit_msm(d: PanelDataset, spec: OutcomeSpec) -> feglm.FitResult:
    """Weighted pooled GLM of the outcome on the treatment terms alone."""
    mask = _usable_rows(d, spec)
    if not mask.any():
        raise ValidationError("no usable rows for the outcome model")
    _check_treatment_terms(d, spec, mask)
    sub = d.frame.loc[mask].reset_index(drop=True)
    if spec.weights is not None:
        sub[_MSM_WEIGHT_COL] = np.asarray(spec.weights, dtype=float)[mask]
        wcol = _MSM_WEIGHT_COL
    else:
        wcol = None
    dd = PanelDataset(sub, cluster_col=d.cluster_col, province_col=d.province_col)
    mspec = feglm.ModelSpec(
        response=spec.outcome,
        terms=spec.treatment_terms,
        family=spec.family,
        fe_group=None,
        obs_weights=wcol,
        fractional=spec.fractional,
    )
    result = feglm.fit(dd, mspec)
    # re-anchor row_index to the caller's dataset
    result.row_index = np.flatnonzero(mask)[result.row_index]
    return result


def incremental_effect(
    fit_result: feglm.FitResult,
    d: PanelDataset,
    weights: np.ndarray | None = None,
    focal: str | None = None,
) -> float:
    """Average percentage-point effect of flipping the focal term 0 -> 1.

    Averages expit(eta | focal=1) - expit(eta | focal=0) over the estimation
    rows with the model's weights, holding the other terms at their observed
    values. Logistic fits only; a gaussian coefficient already lives on the
    outcome scale.
    """
    spec = fit_result.spec
    if spec.family != "logistic":
        raise ValidationError("incremental effects apply to logistic fits only")
    terms = list(spec.terms)
    focal = focal or terms[0]
    if focal not in terms:
        raise ValidationError(f"focal term '{focal}' is not in the fitted model")
    rows = fit_result.row_index
    X = d.frame[terms].to_numpy(dtype=float)[rows]
    if weights is None:
        w = np.ones(len(rows))
    else:
        w = np.asarray(weights, dtype=float)[rows]
    j = terms.index(focal)
    X1 = X.copy()
    X0 = X.copy()
    X1[:, j] = 1.0
    X0[:, j] = 0.0
    eta1 = fit_result.intercept + X1 @ fit_result.params
    eta0 = fit_result.intercept + X0 @ fit_result.params
    diff = expit(eta1) - expit(eta0)
    return float(100.0 * np.sum(w * diff) / np.sum(w))


def percent_change(fit_result: feglm.FitResult, focal: str | None = None) -> float:
    """100 * (exp(coefficient) - 1) for a gaussian fit on a log outcome."""
    if fit_result.spec.family != "gaussian":
        raise ValidationError("percent_change applies to gaussian (log-outcome) fits")
    terms = list(fit_result.spec.terms)
    focal = focal or terms[0]
    if focal not in terms:
        raise ValidationError(f"focal term '{focal}' is not in the fitted model")
    coef = fit_result.params[terms.index(focal)]
    return float(100.0 * (np.exp(coef) - 1.0))


def window_cumulative_effect(
    point_effects: Sequence[float], replicate_effects: np.ndarray
) -> tuple[float, float, float]:
    """Sum per-horizon incremental effects; CI from within-replicate sums.

    replicate_effects has one column per horizon and one row per bootstrap
    replicate; the CI percentiles the row sums so horizon correlation is
    preserved.
    """
    points = np.asarray(point_effects, dtype=float)
    reps = np.asarray(replicate_effects, dtype=float)
    if points.ndim != 1 or reps.ndim != 2 or reps.shape[1] != len(points):
        raise ValidationError("need one replicate column per horizon effect")
    if np.any(~np.isfinite(points)):
        raise ValidationError("a horizon effect is missing")
    total = float(points.sum())
    sums = reps.sum(axis=1)
    sums = sums[np.isfinite(sums)]
    if sums.size == 0:
        raise ValidationError("no finite replicate sums")
    lo, hi = np.percentile(sums, [2.5, 97.5])
    return total, float(lo), float(hi)


@dataclass(frozen=True)
class EffectEstimate:
    """A causal estimate with its transform and bootstrap inference."""

    coefficient: float
    incremental_effect: float | None
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    n_obs: int
    n_units: int
    ess_percent: float
    ci_low_normal: float = field(default=np.nan)
    ci_high_normal: float = field(default=np.nan)
    percent_change: float | None = None
    name: str = ""


def twfe_fit(
    d: PanelDataset,
    outcome: str,
    terms: Sequence[str],
    time_fe: bool = False,
    tol: float = 1e-12,
    max_sweeps: int = 200,
) -> dict[str, float]:
    """Within-transformed OLS with unit (and optionally time) fixed effects.

    One fixed-effect dimension demeans exactly in one pass; the two-way case
    alternates unit and time demeaning to convergence, which for balanced
    panels also finishes in one sweep (plus the grand-mean adjustment folded
    into the alternation).
    """
    terms = list(terms)
    d.require_columns([outcome, *terms])
    f = d.frame
    na = f[[outcome, *terms]].isna().any(axis=1).to_numpy()
    sub = f.loc[~na]
    Y = sub[outcome].to_numpy(dtype=float)
    X = sub[terms].to_numpy(dtype=float)
    ucodes = np.unique(sub["unit"].to_numpy(), return_inverse=True)[1]
    tcodes = np.unique(sub["time"].to_numpy(), return_inverse=True)[1]
    nu, nt = ucodes.max() + 1, tcodes.max() + 1

    M = np.column_stack([Y, X])

    def demean(mat, codes, n):
        counts = np.bincount(codes, minlength=n).astype(float)
        for j in range(mat.shape[1]):
            means = np.bincount(codes, weights=mat[:, j], minlength=n) / counts
            mat[:, j] -= means[codes]
        return mat

    M = demean(M, ucodes, nu)
    if time_fe:
        for _ in range(max_sweeps):
            before = M.copy()
            M = demean(M, tcodes, nt)
            M = demean(M, ucodes, nu)
            if np.abs(M - before).max() < tol:
                break

    Yt, Xt = M[:, 0], M[:, 1:]
    scale = np.abs(Xt).max(axis=0)
    dead = scale < 1e-10 * max(1.0, np.abs(X).max())
    if dead.any():
        names = [terms[i] for i in np.flatnonzero(dead)]
        raise CollinearityError(
            f"terms absorbed by the fixed effects (no within variation): {names}"
        )
    coef, _, rank, _ = np.linalg.lstsq(Xt, Yt, rcond=None)
    if rank < Xt.shape[1]:
        raise CollinearityError("within-transformed design is rank deficient")
    return dict(zip(terms, coef.tolist()))
