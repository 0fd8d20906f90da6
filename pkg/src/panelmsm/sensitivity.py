"""Sensitivity analyses for the weighted outcome model.

Two diagnostics live here. The phi sweep corrects the outcome for a
hypothesized selection effect proportional to accumulated surprise in
treatment assignment, then refits the outcome model over a grid of phi
values with the weights held fixed. The parametric positivity check
resimulates treatment histories from the fitted assignment model (covariates
and unit effects held at their observed/estimated values), redraws outcomes
from a conditional outcome model fitted alongside, and measures the bias the
full estimation pipeline shows against the marginal contrast that model
implies. The conditional redraw is what gives the check its power: outcomes
drawn from the marginal model alone would leave every replicate unconfounded,
and the weighted estimating equation is solved exactly in expectation there
no matter how degenerate the weights are.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from . import feglm
from .bootstrap import pairs_cluster_bootstrap
from .errors import (
    DroppedGroupWarning,
    InferenceError,
    UnseenGroupWarning,
    ValidationError,
)
from .outcome import OutcomeSpec, fit_msm, incremental_effect
from .panel import PanelDataset, complete_case_filter, shift_within_units

_Y_COL = "_y_corrected"
_W_COL = "_w_fixed"


def selection_ramp(d: PanelDataset, den_fit: feglm.FitResult) -> np.ndarray:
    """Accumulated assignment surprise per row: cumsum of (t - Pr(t=1)).

    A treated period adds Pr(t=0), an untreated one subtracts Pr(t=1).
    Accumulation starts at each unit's first period with a defined
    assignment probability (lagged treatments available); earlier rows are
    missing. A missing probability later in a unit's history poisons the
    ramp from that point on.
    """
    treatment = den_fit.spec.response
    d.require_columns([treatment])
    p1 = feglm.predict(den_fit, d)
    t = d.frame[treatment].to_numpy(dtype=float)
    contrib = t - p1
    out = np.full(len(contrib), np.nan)
    codes = d.unit_codes()
    starts = np.flatnonzero(np.r_[True, codes[1:] != codes[:-1]])
    stops = np.r_[starts[1:], len(contrib)]
    for a, b in zip(starts, stops):
        seg = contrib[a:b]
        finite = np.flatnonzero(np.isfinite(seg))
        if len(finite) == 0:
            continue
        first = finite[0]
        out[a + first : b] = np.cumsum(seg[first:])
    return out


def corrected_outcome(
    d: PanelDataset,
    den_fit: feglm.FitResult,
    outcome: str,
    phi: float,
    ramp: np.ndarray | None = None,
) -> np.ndarray:
    """Outcome minus phi times the selection ramp.

    Linear in phi row by row; at phi = 0 the returned values equal the
    observed outcome bit for bit wherever the ramp is defined. Rows without
    a defined ramp come back missing.
    """
    d.require_columns([outcome])
    if ramp is None:
        ramp = selection_ramp(d, den_fit)
    y = d.frame[outcome].to_numpy(dtype=float)
    return y - phi * ramp


@dataclass(frozen=True)
class SensitivityCurve:
    """Effect estimates across the phi grid, with bootstrap bands."""

    phis: np.ndarray
    estimates: np.ndarray
    incremental: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    engine: str
    base_estimate: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "phi": self.phis,
                "estimate": self.estimates,
                "incremental_pp": self.incremental,
                "ci_low": self.ci_low,
                "ci_high": self.ci_high,
            }
        )


def phi_sweep(
    d: PanelDataset,
    spec: OutcomeSpec,
    den_fit: feglm.FitResult,
    phis: Sequence[float] | None = None,
    B: int = 200,
    seed: int | None = None,
    engine: str = "logistic",
) -> SensitivityCurve:
    """Refit the outcome model on phi-corrected outcomes over a grid.

    Weights and corrected outcomes are computed once from the original fit
    and travel with the rows; each phi's bootstrap resamples clusters and
    refits only the two-parameter outcome model. The same seed drives every
    phi so the resample draws match across the grid. Corrected outcomes are
    continuous, so the logistic engine refits in fractional mode; the
    gaussian engine runs least squares instead, under which the estimate is
    affine in phi by construction.
    """
    if engine not in ("logistic", "gaussian"):
        raise ValidationError(f"unknown sweep engine '{engine}'")
    if spec.weights is None:
        raise ValidationError("phi sweep expects the weighted outcome spec")
    if phis is None:
        phis = np.arange(-1.0, 1.0 + 1e-9, 0.25)
    phis = np.asarray(list(phis), dtype=float)
    if phis.size == 0:
        raise ValidationError("phi grid is empty")

    ramp = selection_ramp(d, den_fit)
    focal = spec.treatment_terms[0]
    w = np.asarray(spec.weights, dtype=float)
    keep = ["unit", "time", d.cluster_col, *spec.treatment_terms]
    if d.province_col:
        keep.append(d.province_col)
    frame = d.frame[list(dict.fromkeys(keep))].copy()
    frame[_W_COL] = w

    estimates = np.full(phis.size, np.nan)
    incr = np.full(phis.size, np.nan)
    lo = np.full(phis.size, np.nan)
    hi = np.full(phis.size, np.nan)

    family = "logistic" if engine == "logistic" else "gaussian"
    fractional = engine == "logistic"

    def make_estimator():
        def run(dd: PanelDataset) -> float:
            ws = dd.frame[_W_COL].to_numpy(dtype=float)
            ospec = OutcomeSpec(
                outcome=_Y_COL,
                treatment_terms=spec.treatment_terms,
                family=family,
                weights=ws,
                fractional=fractional,
            )
            fit = fit_msm(dd, ospec)
            return float(fit.params[list(fit.spec.terms).index(focal)])

        return run

    base_estimate = float("nan")
    for i, phi in enumerate(phis):
        f = frame.copy()
        f[_Y_COL] = corrected_outcome(d, den_fit, spec.outcome, float(phi), ramp=ramp)
        dd = PanelDataset(f, cluster_col=d.cluster_col, province_col=d.province_col)
        try:
            boot = pairs_cluster_bootstrap(make_estimator(), dd, B=B, seed=seed)
        except InferenceError as exc:
            raise InferenceError(
                f"sweep bands failed at phi={phi:g}: {exc}; corrected outcomes "
                "far from [0, 1] make the fractional logistic refit "
                "separation-prone, so try engine='gaussian' or a narrower "
                "phi grid"
            ) from exc
        estimates[i] = boot.estimate
        lo[i], hi[i] = boot.ci
        if engine == "logistic":
            ospec = OutcomeSpec(
                outcome=_Y_COL,
                treatment_terms=spec.treatment_terms,
                family=family,
                weights=f[_W_COL].to_numpy(dtype=float),
                fractional=True,
            )
            fit = fit_msm(dd, ospec)
            incr[i] = incremental_effect(
                fit, dd, weights=f[_W_COL].to_numpy(dtype=float), focal=focal
            )
        else:
            # least squares estimates the probability difference directly
            incr[i] = 100.0 * boot.estimate
        if phi == 0.0:
            base_estimate = estimates[i]

    if not np.isfinite(base_estimate):
        f = frame.copy()
        f[_Y_COL] = corrected_outcome(d, den_fit, spec.outcome, 0.0, ramp=ramp)
        dd = PanelDataset(f, cluster_col=d.cluster_col, province_col=d.province_col)
        base_estimate = make_estimator()(dd)

    return SensitivityCurve(
        phis=phis,
        estimates=estimates,
        incremental=incr,
        ci_low=lo,
        ci_high=hi,
        engine=engine,
        base_estimate=float(base_estimate),
    )


@dataclass(frozen=True)
class PositivityDiagnostic:
    """Resimulation bias of the full pipeline against the plug-in truth."""

    bias: float
    se_reference: float
    flag: bool
    ci_corrected: tuple[float, float]
    plug_in: float
    replicates: np.ndarray
    n_failed: int

    def summary(self) -> str:
        lines = [
            f"plug-in truth: {self.plug_in:.6g}",
            f"replicate mean: {self.plug_in + self.bias:.6g} "
            f"({len(self.replicates)} replicates, {self.n_failed} failed)",
            f"estimated bias: {self.bias:.6g}",
            f"reference se: {self.se_reference:.6g}",
            f"practical positivity violation: {'yes' if self.flag else 'no'}",
            f"bias-corrected ci: [{self.ci_corrected[0]:.6g}, "
            f"{self.ci_corrected[1]:.6g}]",
        ]
        return "\n".join(lines)


def _lag_structure(den_fit: feglm.FitResult) -> tuple[dict[int, float], list[str]]:
    treatment = den_fit.spec.response
    pat = re.compile(re.escape(treatment) + r"_lag_(\d+)$")
    lag_coefs: dict[int, float] = {}
    fixed_terms: list[str] = []
    for name, coef in zip(den_fit.spec.terms, den_fit.params):
        m = pat.match(name)
        if m:
            lag_coefs[int(m.group(1))] = float(coef)
        else:
            fixed_terms.append(name)
    if not lag_coefs:
        raise ValidationError(
            "assignment model has no lagged-treatment terms; nothing to resimulate"
        )
    return lag_coefs, fixed_terms


def _fixed_eta(d: PanelDataset, fit: feglm.FitResult, fixed_terms: list[str]) -> np.ndarray:
    """Linear predictor from the non-treatment terms of a fit.

    Sums intercept, the named terms at their observed values, and the
    absorbed group offsets; rows of dropped or unseen groups come back
    missing.
    """
    f = d.frame
    d.require_columns(fixed_terms)
    eta = np.full(len(f), fit.intercept)
    coefs = fit.params_dict()
    for name in fixed_terms:
        eta = eta + coefs[name] * f[name].to_numpy(dtype=float)
    spec = fit.spec
    if spec.fe_group is not None:
        d.require_columns([spec.fe_group])
        fe = fit.fe_values or {}
        groups = f[spec.fe_group].to_numpy()
        labs, codes = np.unique(groups, return_inverse=True)
        offsets = np.array([fe.get(lab, np.nan) for lab in labs])
        eta = eta + offsets[codes]
    return eta


def _treatment_term_values(
    name: str, t_sim: np.ndarray, codes: np.ndarray
) -> np.ndarray:
    """Rebuild one treatment-derived regressor from a simulated path."""
    m_lag = re.match(r"^(.*)_lag_(\d+)$", name)
    m_lead = re.match(r"^(.*)_lead_(\d+)$", name)
    if m_lag:
        return shift_within_units(t_sim, codes, int(m_lag.group(2)))
    if m_lead:
        return shift_within_units(t_sim, codes, -int(m_lead.group(2)))
    if name.endswith("_any"):
        return np.where(np.isfinite(t_sim), (t_sim > 0).astype(float), np.nan)
    if name.endswith("_cum"):
        vals = np.empty_like(t_sim)
        starts = np.flatnonzero(np.r_[True, codes[1:] != codes[:-1]])
        stops = np.r_[starts[1:], len(t_sim)]
        for a, b in zip(starts, stops):
            vals[a:b] = np.cumsum(t_sim[a:b])
        return vals
    return t_sim


def _generative_outcome_fit(
    d: PanelDataset,
    outcome: str,
    treatment_terms: tuple[str, ...],
    covariate_terms: list[str],
    family: str,
) -> feglm.FitResult:
    """Conditional outcome model the resimulation draws from.

    Regressors are the outcome model's treatment terms plus everything the
    assignment model conditions on besides treatment history, with unit
    effects absorbed. Fit unweighted: this is a description of the observed
    conditional law, not a causal estimate.
    """
    terms = tuple(dict.fromkeys([*treatment_terms, *covariate_terms]))
    sub, _ = complete_case_filter(d, [outcome, *terms])
    spec = feglm.ModelSpec(
        response=outcome, terms=terms, family=family, fe_group="unit"
    )
    return feglm.fit(sub, spec)


def _marginal_contrast(
    eta_off_focal: np.ndarray,
    focal_coef: float,
    rows: np.ndarray,
    family: str,
    p_focal_num: np.ndarray,
) -> float:
    """Marginal focal contrast the weighted estimator targets.

    Stabilized weights leave a pseudo-population tilted by the numerator
    model: each arm's counterfactual mean is averaged with that arm's
    numerator probability as the row weight. Without the tilt a unit whose
    outcome level tracks its assignment propensity would shift the contrast
    even under perfectly healthy weights. Counterfactual responses come
    from the conditional model with the focal term forced to 1 and to 0 and
    the other terms at observed values; the contrast is returned on the
    estimation scale (log-odds or level difference).
    """
    eta = eta_off_focal[rows]
    p1 = p_focal_num[rows]
    use = np.isfinite(eta) & np.isfinite(p1)
    if not use.any():
        raise InferenceError("no rows with a defined conditional outcome model")
    eta = eta[use]
    p1 = p1[use]
    if family == "logistic":
        q1 = expit(eta + focal_coef)
        q0 = expit(eta)
    else:
        q1 = eta + focal_coef
        q0 = eta
    mu1 = float(np.sum(p1 * q1) / np.sum(p1))
    mu0 = float(np.sum((1.0 - p1) * q0) / np.sum(1.0 - p1))
    if family == "logistic":
        return float(np.log(mu1 / (1.0 - mu1)) - np.log(mu0 / (1.0 - mu0)))
    return mu1 - mu0


def positivity_bootstrap(
    d: PanelDataset,
    num_fit: feglm.FitResult,
    den_fit: feglm.FitResult,
    msm_fit: feglm.FitResult,
    estimator: Callable[[PanelDataset], float],
    base_se: float,
    base_ci: tuple[float, float],
    B: int = 200,
    seed: int | None = None,
    max_failure_share: float = 0.2,
) -> PositivityDiagnostic:
    """Parametric bootstrap that stress-tests practical positivity.

    Treatment paths are redrawn sequentially from the fitted assignment
    model with covariates, trends, and unit effects frozen at their
    observed/estimated values; each unit's first periods stay at the
    observed treatments until the lag window fills. Outcomes are redrawn
    from a conditional model (treatment terms plus the assignment model's
    covariates, unit effects absorbed) fitted here once, which keeps the
    replicates confounded the way the observed data are. The target is the
    marginal focal contrast that conditional model implies; with healthy
    propensities the reweighted pipeline recovers it, while weights pushed
    against the boundary leave residual confounding behind as bias. The
    whole estimation pipeline runs per replicate on the same pre-filter
    panel shape as the base fit. A bias at least as large as the base
    standard error flags a practical violation.
    """
    if seed is None:
        raise ValidationError("resimulation seed is mandatory")
    if B < 1:
        raise ValidationError("B must be at least 1")

    treatment = den_fit.spec.response
    outcome = msm_fit.spec.response
    d.require_columns([treatment, outcome])
    lag_coefs, fixed_terms = _lag_structure(den_fit)
    eta_fixed_flat = _fixed_eta(d, den_fit, fixed_terms)

    family = msm_fit.spec.family
    treatment_terms = tuple(msm_fit.spec.terms)
    q_fit = _generative_outcome_fit(d, outcome, treatment_terms, fixed_terms, family)
    q_coefs = q_fit.params_dict()
    q_fixed = [t for t in q_fit.spec.terms if t not in treatment_terms]
    eta_q_fixed_flat = _fixed_eta(d, q_fit, q_fixed)

    focal = treatment_terms[0]
    eta_off_focal = eta_q_fixed_flat.copy()
    for name in treatment_terms:
        if name == focal:
            continue
        eta_off_focal = eta_off_focal + q_coefs[name] * d.frame[name].to_numpy(
            dtype=float
        )
    plug_in = _marginal_contrast(
        eta_off_focal,
        q_coefs[focal],
        msm_fit.row_index,
        family,
        feglm.predict(num_fit, d),
    )

    if family == "gaussian":
        resid = d.frame[outcome].to_numpy(dtype=float)[q_fit.row_index] - q_fit.fitted
        dof = max(
            1,
            len(resid) - len(q_fit.params) - 1 - len(q_fit.fe_values or {}),
        )
        gaussian_sigma = float(np.sqrt(np.sum(resid**2) / dof))
    else:
        gaussian_sigma = None

    codes = d.unit_codes()
    n_units = int(codes.max()) + 1 if len(codes) else 0
    starts = np.flatnonzero(np.r_[True, codes[1:] != codes[:-1]])
    lengths = np.diff(np.r_[starts, len(codes)])
    n_pos = int(lengths.max())

    # position grid: cell (u, p) is unit u's p-th observed row, which keeps
    # lag mechanics identical to the positional shifts used at fit time
    row_of = np.full((n_units, n_pos), -1, dtype=np.intp)
    pos = np.arange(len(codes)) - np.repeat(starts, lengths)
    row_of[codes, pos] = np.arange(len(codes))
    exists = row_of >= 0

    t_obs_flat = d.frame[treatment].to_numpy(dtype=float)
    y_obs_flat = d.frame[outcome].to_numpy(dtype=float)

    def to_grid(flat: np.ndarray) -> np.ndarray:
        return np.where(exists, flat[np.clip(row_of, 0, None)], np.nan)

    t_obs = to_grid(t_obs_flat)
    eta_fixed = to_grid(eta_fixed_flat)

    children = np.random.SeedSequence(seed).spawn(B)
    replicates: list[float] = []
    failures: list[tuple[int, str]] = []
    max_lag = max(lag_coefs)

    for b in range(B):
        rng = np.random.default_rng(children[b])
        u_draw = rng.random((n_units, n_pos))
        t_sim = t_obs.copy()
        for p in range(max_lag, n_pos):
            eta = eta_fixed[:, p].copy()
            for m, coef in lag_coefs.items():
                eta = eta + coef * t_sim[:, p - m]
            can = np.isfinite(eta) & exists[:, p]
            t_sim[can, p] = (u_draw[can, p] < expit(eta[can])).astype(float)
        t_sim_flat = t_obs_flat.copy()
        t_sim_flat[row_of[exists]] = t_sim[exists]

        eta_y = eta_q_fixed_flat.copy()
        for name in treatment_terms:
            eta_y = eta_y + q_coefs[name] * _treatment_term_values(
                name, t_sim_flat, codes
            )
        if family == "logistic":
            y_sim = (rng.random(len(eta_y)) < expit(eta_y)).astype(float)
        else:
            y_sim = eta_y + rng.normal(0.0, gaussian_sigma, len(eta_y))
        y_sim = np.where(np.isfinite(eta_y), y_sim, y_obs_flat)

        f2 = d.frame.copy()
        f2[treatment] = t_sim_flat
        f2[outcome] = y_sim
        rep = PanelDataset(f2, cluster_col=d.cluster_col, province_col=d.province_col)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DroppedGroupWarning)
                warnings.simplefilter("ignore", UnseenGroupWarning)
                replicates.append(float(estimator(rep)))
        except Exception as exc:  # noqa: BLE001  (pipeline failures vary)
            failures.append((b, f"{type(exc).__name__}: {exc}"))

    if len(failures) > max_failure_share * B:
        raise InferenceError(
            f"{len(failures)} of {B} resimulation replicates failed; "
            f"first failure: {failures[0][1]}"
        )
    reps = np.asarray(replicates, dtype=float)
    bias = float(np.mean(reps) - plug_in)
    flag = bool(abs(bias) >= base_se)
    corrected = (base_ci[0] - bias, base_ci[1] - bias)
    return PositivityDiagnostic(
        bias=bias,
        se_reference=float(base_se),
        flag=flag,
        ci_corrected=corrected,
        plug_in=plug_in,
        replicates=reps,
        n_failed=len(failures),
    )
