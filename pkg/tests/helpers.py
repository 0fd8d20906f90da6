"""Small builders shared across test modules."""

from __future__ import annotations

import numpy as np
import pandas as pd
from scipy.special import logit

from panelmsm import feglm
from panelmsm.panel import PanelDataset


def panel_from(**cols) -> PanelDataset:
    """Build a PanelDataset from keyword columns (unit/time required)."""
    return PanelDataset(pd.DataFrame(cols))


def balanced_panel(n_units: int, n_periods: int, **extra) -> PanelDataset:
    """Balanced skeleton with unit/time plus any extra flat columns."""
    unit = np.repeat(np.arange(n_units), n_periods)
    time = np.tile(np.arange(1, n_periods + 1), n_units)
    return panel_from(unit=unit, time=time, **extra)


def prob_fit(
    d: PanelDataset,
    p: np.ndarray,
    response: str,
    col: str = "zlogit",
) -> tuple[PanelDataset, feglm.FitResult]:
    """A logistic FitResult whose predict() returns exactly p per row.

    Stores logit(p) in a fresh column and sets a unit slope on it, so
    hand-chosen probabilities flow through the real prediction path.
    """
    p = np.asarray(p, dtype=float)
    f = d.frame.copy()
    f[col] = logit(p)
    d2 = PanelDataset(f)
    spec = feglm.ModelSpec(response=response, terms=(col,), family="logistic")
    fit = feglm.FitResult(
        spec=spec,
        params=np.array([1.0]),
        intercept=0.0,
        fe_values=None,
        loglik=0.0,
        iterations=0,
        converged=True,
        fitted=p.copy(),
        row_index=np.arange(len(f)),
        dropped_groups=[],
        n_obs=len(f),
    )
    return d2, fit


def coef_fit(
    terms: tuple[str, ...],
    params,
    intercept: float = 0.0,
    family: str = "logistic",
    n_rows: int = 10,
    response: str = "y",
) -> feglm.FitResult:
    """A FitResult with chosen coefficients, for effect-formula checks."""
    spec = feglm.ModelSpec(response=response, terms=terms, family=family)
    return feglm.FitResult(
        spec=spec,
        params=np.asarray(params, dtype=float),
        intercept=intercept,
        fe_values=None,
        loglik=0.0,
        iterations=0,
        converged=True,
        fitted=np.full(n_rows, 0.5),
        row_index=np.arange(n_rows),
        dropped_groups=[],
        n_obs=n_rows,
    )


def dummy_logistic_mle(y, X, groups, weights=None):
    """Reference fit: logistic MLE with one dummy column per group.

    Independent oracle for the concentrated fixed-effects solver: the group
    intercepts stay as explicit columns and the whole parameter vector is
    solved jointly by damped Newton. Returns the slopes aligned with X.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    groups = np.asarray(groups)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    labs, codes = np.unique(groups, return_inverse=True)
    D = np.zeros((len(y), len(labs)))
    D[np.arange(len(y)), codes] = 1.0
    Z = np.hstack([X, D])

    def negll(b):
        eta = Z @ b
        return -np.sum(w * (y * eta - np.logaddexp(0.0, eta)))

    b = np.zeros(Z.shape[1])
    f = negll(b)
    for _ in range(200):
        eta = Z @ b
        mu = 1.0 / (1.0 + np.exp(-eta))
        g = Z.T @ (w * (y - mu))
        if np.max(np.abs(g)) < 1e-10:
            break
        H = (Z * (w * mu * (1.0 - mu))[:, None]).T @ Z
        step = np.linalg.solve(H + 1e-12 * np.eye(len(b)), g)
        t = 1.0
        while t > 1e-8:
            f_new = negll(b + t * step)
            if f_new <= f + 1e-12 * max(1.0, abs(f)):
                b = b + t * step
                f = f_new
                break
            t *= 0.5
    return b[: X.shape[1]]


def random_fe_instance(rng, max_units=30, max_periods=15, n_terms=2):
    """One random panel with a binary response and unit intercepts.

    Units whose response never varies are regenerated so the explicit-dummy
    oracle stays well-posed on every group.
    """
    while True:
        n_units = int(rng.integers(4, max_units + 1))
        n_periods = int(rng.integers(4, max_periods + 1))
        n = n_units * n_periods
        unit = np.repeat(np.arange(n_units), n_periods)
        X = rng.normal(size=(n, n_terms))
        alpha = rng.normal(scale=0.7, size=n_units)
        beta = rng.normal(scale=0.6, size=n_terms)
        eta = X @ beta + alpha[unit]
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        means = np.array([y[unit == u].mean() for u in range(n_units)])
        if np.all((means > 0) & (means < 1)):
            break
    time = np.tile(np.arange(1, n_periods + 1), n_units)
    cols = {f"x{k}": X[:, k] for k in range(n_terms)}
    d = panel_from(unit=unit, time=time, y=y, **cols)
    return d, X, y, unit
