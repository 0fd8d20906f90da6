"""Logistic and gaussian GLM fitting with absorbed group fixed effects.

The solver is iteratively reweighted least squares. With one fixed-effect
dimension the alternating-projections step collapses to exact weighted group
demeaning, so each IRLS iteration demeans the working response and regressors
within groups, solves the small dense normal equations for the slopes, and
recovers the group intercepts from the per-group first-order condition.

A model without a fixed-effect group is fit as the single-group special case,
which makes the absorbed "group intercept" the ordinary intercept. Every
family and mode (binary logistic, fractional-response logistic, gaussian)
shares this one code path; only input validation differs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit

from .errors import (
    CollinearityError,
    ConvergenceError,
    DroppedGroupWarning,
    EstimationError,
    SeparationError,
    UnseenGroupWarning,
    ValidationError,
)
from .panel import PanelDataset

_FAMILIES = ("logistic", "gaussian")

# |eta| beyond this at convergence marks (quasi-)separation; expit saturates
# far earlier, so genuine fits never get close.
_SEPARATION_CAP = 30.0

_MAX_ITER = 100
_TOL_SCORE = 1e-8
_TOL_DEV = 1e-9


@dataclass(frozen=True)
class ModelSpec:
    """What to fit: response, regressor columns, family, and absorbed group.

    terms are plain column names; polynomial pieces (squares, trends) are
    expected as pre-built columns. obs_weights names a column of positive
    observation weights. fractional enables the quasi-likelihood logistic
    used for refits on corrected outcomes in [0, 1] or beyond {0, 1}.
    """

    response: str
    terms: tuple[str, ...]
    family: str = "logistic"
    fe_group: str | None = None
    obs_weights: str | None = None
    fractional: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.family not in _FAMILIES:
            raise ValidationError(f"unknown family '{self.family}'")
        if not self.terms and self.fe_group is None:
            raise ValidationError("a model needs terms or a fixed-effect group")
        if self.fractional and self.family != "logistic":
            raise ValidationError("fractional mode applies to the logistic family only")


@dataclass
class FitResult:
    """One converged GLM fit.

    params aligns with spec.terms. fe_values maps group label to its
    mean-centered intercept (None when no group was absorbed); the overall
    intercept absorbs the mean. fitted holds per-row probabilities
    (logistic) or means (gaussian) for the rows actually used, indexed into
    the source frame by row_index.
    """

    spec: ModelSpec
    params: np.ndarray
    intercept: float
    fe_values: dict | None
    loglik: float
    iterations: int
    converged: bool
    fitted: np.ndarray
    row_index: np.ndarray
    dropped_groups: list
    n_obs: int
    deviance_trace: list[float] = field(default_factory=list)

    def params_dict(self) -> dict[str, float]:
        return dict(zip(self.spec.terms, self.params.tolist()))


def _loglik(y: np.ndarray, eta: np.ndarray, w: np.ndarray, family: str) -> float:
    if family == "logistic":
        # y*eta - log(1 + e^eta), stable at both tails
        return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))
    return float(-0.5 * np.sum(w * (y - eta) ** 2))


def _check_response(y: np.ndarray, spec: ModelSpec) -> None:
    if spec.family != "logistic":
        return
    if spec.fractional:
        return
    if np.any((y != 0) & (y != 1)):
        raise ValidationError(
            f"'{spec.response}' must be 0/1 for a logistic fit "
            "(enable fractional mode for corrected outcomes)"
        )


def _extract(d: PanelDataset, spec: ModelSpec):
    cols = [spec.response, *spec.terms]
    if spec.fe_group:
        cols.append(spec.fe_group)
    if spec.obs_weights:
        cols.append(spec.obs_weights)
    d.require_columns(cols)
    f = d.frame
    numeric = [spec.response, *spec.terms]
    if spec.obs_weights:
        numeric.append(spec.obs_weights)
    na = f[numeric].isna().any(axis=1)
    if spec.fe_group:
        na |= f[spec.fe_group].isna()
    if na.any():
        raise ValidationError(
            f"{int(na.sum())} rows have missing values in model columns; "
            "apply complete_case_filter first"
        )
    y = f[spec.response].to_numpy(dtype=float)
    X = f[list(spec.terms)].to_numpy(dtype=float) if spec.terms else np.empty((len(f), 0))
    if spec.obs_weights:
        w = f[spec.obs_weights].to_numpy(dtype=float)
        if np.any(w <= 0):
            raise ValidationError("observation weights must be strictly positive")
    else:
        w = np.ones(len(f))
    if spec.fe_group:
        labels, codes = np.unique(f[spec.fe_group].to_numpy(), return_inverse=True)
    else:
        labels = np.array([0])
        codes = np.zeros(len(f), dtype=np.intp)
    return y, X, w, codes, labels


def fit(d: PanelDataset, spec: ModelSpec, max_iter: int = _MAX_ITER) -> FitResult:
    """Maximum-likelihood fit with the group intercepts concentrated out.

    Under the logistic family, groups whose response never varies (all 0 or
    all 1) have an infinite intercept; their rows are dropped with a
    DroppedGroupWarning, matching standard fixed-effects logit practice.

    Raises
    ------
    SeparationError
        Any |linear predictor| exceeds the separation cap at convergence.
    ConvergenceError
        The iteration budget is exhausted (deviance trace attached).
    CollinearityError
        The demeaned design is singular.
    """
    y, X, w, codes, labels = _extract(d, spec)
    _check_response(y, spec)
    row_index = np.arange(len(y))

    dropped: list = []
    if spec.family == "logistic" and spec.fe_group is not None:
        n_g = len(labels)
        g_mean = np.bincount(codes, weights=y, minlength=n_g) / np.bincount(
            codes, minlength=n_g
        )
        bad = (g_mean == 0.0) | (g_mean == 1.0)
        if bad.any():
            dropped = [labels[i] for i in np.flatnonzero(bad)]
            warnings.warn(
                f"dropping {len(dropped)} group(s) with constant response: "
                f"{dropped[:10]}",
                DroppedGroupWarning,
                stacklevel=2,
            )
            keep = ~bad[codes]
            if not keep.any():
                raise EstimationError("no rows remain after dropping constant-response groups")
            y, X, w = y[keep], X[keep], w[keep]
            row_index = row_index[keep]
            labels, codes = np.unique(
                d.frame[spec.fe_group].to_numpy()[row_index], return_inverse=True
            )

    beta, alpha, eta, ll, iters, converged, trace = _irls(
        y, X, w, codes, len(labels), spec.family, max_iter
    )

    if spec.family == "logistic" and np.abs(eta).max(initial=0.0) > _SEPARATION_CAP:
        offenders = np.unique(codes[np.abs(eta) > _SEPARATION_CAP])
        names = [labels[i] for i in offenders]
        raise SeparationError(
            f"separation detected (|linear predictor| > {_SEPARATION_CAP:g}) "
            f"in group(s) {names[:10]}",
            groups=names,
        )
    if not converged:
        raise ConvergenceError(
            f"no convergence after {iters} iterations "
            f"(last deviance change {abs(trace[-1] - trace[-2]):.3e})",
            trace=trace,
        )

    mean_alpha = float(np.mean(alpha))
    if spec.fe_group is not None:
        fe_values = {lab: float(a - mean_alpha) for lab, a in zip(labels, alpha)}
    else:
        fe_values = None
    fitted = expit(eta) if spec.family == "logistic" else eta
    return FitResult(
        spec=spec,
        params=beta,
        intercept=mean_alpha,
        fe_values=fe_values,
        loglik=ll,
        iterations=iters,
        converged=converged,
        fitted=fitted,
        row_index=row_index,
        dropped_groups=dropped,
        n_obs=len(y),
        deviance_trace=trace,
    )


def _irls(y, X, w0, codes, n_groups, family, max_iter):
    n, p = X.shape
    # column scaling keeps the score tolerance meaningful when term scales
    # differ wildly (e.g. a squared time trend next to binary lags)
    scale = np.abs(X).max(axis=0) if p else np.empty(0)
    scale = np.where(scale > 0, scale, 1.0)
    Xs = X / scale if p else X

    count_w = np.bincount(codes, weights=w0, minlength=n_groups)
    if family == "logistic":
        g_mean = np.bincount(codes, weights=w0 * y, minlength=n_groups) / count_w
        alpha = np.log(np.clip(g_mean, 1e-3, 1 - 1e-3) / (1 - np.clip(g_mean, 1e-3, 1 - 1e-3)))
    else:
        alpha = np.zeros(n_groups)
    beta = np.zeros(p)
    eta = (Xs @ beta if p else 0.0) + alpha[codes]
    ll = _loglik(y, eta, w0, family)
    trace = [-2.0 * ll]
    converged = False
    it = 0

    for it in range(1, max_iter + 1):
        if family == "logistic":
            mu = expit(eta)
            s = np.maximum(mu * (1.0 - mu), 1e-10)
            z = eta + (y - mu) / s
            W = w0 * s
        else:
            z = y
            W = w0

        sw = np.bincount(codes, weights=W, minlength=n_groups)
        zt = z - (np.bincount(codes, weights=W * z, minlength=n_groups) / sw)[codes]
        if p:
            Xt = np.empty_like(Xs)
            for j in range(p):
                col = Xs[:, j]
                Xt[:, j] = col - (
                    np.bincount(codes, weights=W * col, minlength=n_groups) / sw
                )[codes]
            A = Xt.T @ (W[:, None] * Xt)
            rhs = Xt.T @ (W * zt)
            try:
                beta_new = np.linalg.solve(A, rhs)
            except np.linalg.LinAlgError:
                raise CollinearityError(
                    "design matrix is singular after fixed-effect demeaning"
                ) from None
            if not np.all(np.isfinite(beta_new)):
                raise CollinearityError("non-finite slope update; design is degenerate")
            resid = z - Xs @ beta_new
        else:
            beta_new = beta
            resid = z
        alpha_new = np.bincount(codes, weights=W * resid, minlength=n_groups) / sw

        # step-halving keeps the likelihood nondecreasing; the acceptance
        # slack is relative because rounding noise on ll scales with |ll|
        ll_slack = 1e-12 * max(1.0, abs(ll))
        step = 1.0
        for _ in range(31):
            beta_try = beta + step * (beta_new - beta)
            alpha_try = alpha + step * (alpha_new - alpha)
            eta_try = (Xs @ beta_try if p else 0.0) + alpha_try[codes]
            ll_try = _loglik(y, eta_try, w0, family)
            if ll_try >= ll - ll_slack or step < 1e-9:
                break
            step *= 0.5
        beta, alpha, eta, ll = beta_try, alpha_try, eta_try, ll_try
        trace.append(-2.0 * ll)

        mu = expit(eta) if family == "logistic" else eta
        r = w0 * (y - mu)
        score_beta = Xs.T @ r if p else np.empty(0)
        score_alpha = np.bincount(codes, weights=r, minlength=n_groups)
        max_score = max(
            float(np.abs(score_beta).max(initial=0.0)),
            float(np.abs(score_alpha).max(initial=0.0)),
        )
        rel_dev = abs(trace[-2] - trace[-1]) / (abs(trace[-1]) + 0.1)
        if max_score < _TOL_SCORE and rel_dev < _TOL_DEV:
            converged = True
            break

    beta_out = beta / scale if p else beta
    return beta_out, alpha, eta, ll, it, converged, trace


def loglik_and_score(
    d: PanelDataset,
    spec: ModelSpec,
    beta: np.ndarray,
    alpha: float | Mapping | None = None,
) -> tuple[float, np.ndarray]:
    """Exact log-likelihood and analytic score with respect to the slopes.

    alpha holds the intercept structure fixed: a scalar applies one common
    intercept, a mapping gives one value per fixed-effect group, None means
    zero. The returned gradient covers beta only.
    """
    y, X, w, codes, labels = _extract(d, spec)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (len(spec.terms),):
        raise ValidationError(
            f"beta has shape {beta.shape}, expected ({len(spec.terms)},)"
        )
    if alpha is None:
        a_row = 0.0
    elif isinstance(alpha, Mapping):
        if spec.fe_group is None:
            raise ValidationError("per-group alpha given but spec has no fe_group")
        try:
            a_vec = np.array([float(alpha[lab]) for lab in labels])
        except KeyError as e:
            raise ValidationError(f"alpha mapping is missing group {e.args[0]!r}") from None
        a_row = a_vec[codes]
    else:
        a_row = float(alpha)
    eta = (X @ beta if len(spec.terms) else 0.0) + a_row
    ll = _loglik(y, eta, w, spec.family)
    mu = expit(eta) if spec.family == "logistic" else eta
    score = X.T @ (w * (y - mu)) if len(spec.terms) else np.empty(0)
    return ll, score


def predict(fit_result: FitResult, d: PanelDataset) -> np.ndarray:
    """Per-row probabilities (logistic) or means (gaussian) on any dataset.

    Rows whose fixed-effect group was dropped during fitting get NaN; rows in
    a group the model never saw get NaN plus an UnseenGroupWarning. There is
    no silent extrapolation.
    """
    spec = fit_result.spec
    d.require_columns(list(spec.terms))
    f = d.frame
    X = f[list(spec.terms)].to_numpy(dtype=float) if spec.terms else np.zeros((len(f), 0))
    eta = (X @ fit_result.params if spec.terms else np.zeros(len(f))) + fit_result.intercept
    if spec.fe_group is not None:
        d.require_columns([spec.fe_group])
        fe = fit_result.fe_values or {}
        groups = f[spec.fe_group].to_numpy()
        dropped = set(fit_result.dropped_groups)
        unseen = []
        labs, codes = np.unique(groups, return_inverse=True)
        lab_offsets = np.full(len(labs), np.nan)
        for i, lab in enumerate(labs):
            if lab in fe:
                lab_offsets[i] = fe[lab]
            elif lab not in dropped:
                unseen.append(lab)
        if unseen:
            warnings.warn(
                f"{len(unseen)} group(s) unseen at fit time; predictions set missing: "
                f"{unseen[:10]}",
                UnseenGroupWarning,
                stacklevel=2,
            )
        offsets = lab_offsets[codes]
        eta = eta + offsets
    if spec.family == "logistic":
        out = np.where(np.isnan(eta), np.nan, expit(eta))
    else:
        out = eta
    return out
