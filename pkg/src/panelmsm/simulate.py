"""Synthetic panel generator with treatment-confounder feedback, plus a
Monte-Carlo oracle for the true causal contrasts.

The generative process per unit i and period j (zero pre-sample state):

    x_ij = rho * x_{i,j-1} + gamma * t_{i,j-1} + alpha_x_i + noise
    t_ij ~ Bernoulli(expit(a0 + a_lag * t_{i,j-1} + b_x * x_ij + alpha_i))
    y_ij from the outcome family on (treatment window, x_ij, alpha_i)

x is realized before t within a period, so the current covariate is a
legitimate denominator-model term. The oracle averages closed-form
conditional contrasts over simulated natural histories (common random
numbers across arms), so no outcome noise is ever drawn for the truth.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy.special import expit

from .errors import ValidationError
from .panel import PanelDataset

# first period the default estimator can use: treatment_lags + window + 1
DEFAULT_FIRST_USABLE_PERIOD = 8

_ORACLE_SEED = 20240601


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the synthetic data generating process.

    c_t holds one coefficient per treatment-window position, position 0
    being the current period. c_alpha is the outcome's direct loading on the
    treatment-assignment unit effect; presets aimed at marginal-effect
    recovery keep it 0 so the marginal contrast is the estimand.
    """

    n_units: int
    n_periods: int
    alpha_sd: float = 1.0
    rho: float = 0.6
    gamma: float = 0.3
    a0: float = -1.0
    a_lag: float = 0.5
    b_x: float = 0.8
    c0: float = -0.5
    c_t: tuple[float, ...] = (0.5,)
    c_x: float = 0.5
    c_alpha: float = 0.0
    alpha_x_sd: float = 0.5
    x_noise_sd: float = 1.0
    y_noise_sd: float = 1.0
    family: str = "logistic"
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "c_t", tuple(self.c_t))
        if not abs(self.rho) < 1:
            raise ValidationError("need |rho| < 1 for a stable covariate process")
        if self.n_units < 2:
            raise ValidationError("need at least two units")
        if self.n_periods < max(DEFAULT_FIRST_USABLE_PERIOD, len(self.c_t) + 1):
            raise ValidationError(
                "n_periods too short for the default lag window "
                f"(need at least {max(DEFAULT_FIRST_USABLE_PERIOD, len(self.c_t) + 1)})"
            )
        if not self.c_t:
            raise ValidationError("c_t needs at least the current-period coefficient")
        if self.family not in ("logistic", "gaussian"):
            raise ValidationError(f"unknown outcome family '{self.family}'")


def _simulate_paths(cfg: DgpConfig, rng: np.random.Generator, n: int):
    """Natural covariate and treatment paths for n unit draws.

    Column 0 of each array is the zero pre-sample state; columns 1..J are the
    observed periods. Also returns the x noise so forced-arm recomputation
    can share it.
    """
    J = cfg.n_periods
    alpha_t = rng.normal(0.0, cfg.alpha_sd, n)
    alpha_x = rng.normal(0.0, cfg.alpha_x_sd, n)
    eps = rng.normal(0.0, cfg.x_noise_sd, (n, J + 1))
    u = rng.random((n, J + 1))
    X = np.zeros((n, J + 1))
    T = np.zeros((n, J + 1))
    for j in range(1, J + 1):
        X[:, j] = cfg.rho * X[:, j - 1] + cfg.gamma * T[:, j - 1] + alpha_x + eps[:, j]
        p = expit(cfg.a0 + cfg.a_lag * T[:, j - 1] + cfg.b_x * X[:, j] + alpha_t)
        T[:, j] = (u[:, j] < p).astype(float)
    return alpha_t, alpha_x, X, T, eps


def _window_term(cfg: DgpConfig, T: np.ndarray) -> np.ndarray:
    """sum_m c_t[m] * t_{j-m} for observed periods, zeros before the sample."""
    n, Jp1 = T.shape
    J = Jp1 - 1
    out = np.zeros((n, J))
    cols = np.arange(1, J + 1)
    for m, coef in enumerate(cfg.c_t):
        if coef == 0:
            continue
        src = cols - m
        valid = src >= 0
        out[:, valid] += coef * T[:, src[valid]]
    return out


def generate_panel(cfg: DgpConfig) -> PanelDataset:
    """Draw one panel; deterministic under cfg.seed.

    Columns: unit, time, province (units grouped by tens), x, treat, y.
    """
    rng = np.random.default_rng(cfg.seed)
    alpha_t, _, X, T, _ = _simulate_paths(cfg, rng, cfg.n_units)
    J = cfg.n_periods
    eta_y = (
        cfg.c0
        + cfg.c_x * X[:, 1:]
        + cfg.c_alpha * alpha_t[:, None]
        + _window_term(cfg, T)
    )
    if cfg.family == "logistic":
        y = (rng.random((cfg.n_units, J)) < expit(eta_y)).astype(float)
    else:
        y = eta_y + rng.normal(0.0, cfg.y_noise_sd, (cfg.n_units, J))

    units = np.repeat(np.arange(cfg.n_units), J)
    frame = pd.DataFrame(
        {
            "unit": units,
            "time": np.tile(np.arange(1, J + 1), cfg.n_units),
            "province": units // 10,
            "x": X[:, 1:].ravel(),
            "treat": T[:, 1:].ravel(),
            "y": y.ravel(),
        }
    )
    return PanelDataset(frame, cluster_col="unit", province_col="province")


def oracle_truth(
    cfg: DgpConfig,
    target: str = "current",
    mc_draws: int = 200,
    j_min: int | None = None,
    seed: int = _ORACLE_SEED,
) -> float:
    """True causal contrast under the DGP, in outcome units.

    Targets:
      "current"        E[y_ij(t_j=1) - y_ij(t_j=0)], other history natural.
      "window"         the same with every window position forced.
      "percent_change" 100*(exp(c_t[0]) - 1), gaussian families only.

    For the logistic family the truth is a probability difference (0.40
    means 40 percentage points). Averaging runs over periods j >= j_min,
    defaulting to the first period the default estimator can use, so
    estimator and oracle describe the same person-time population.
    """
    M = len(cfg.c_t)
    if j_min is None:
        j_min = DEFAULT_FIRST_USABLE_PERIOD
    if target == "percent_change":
        if cfg.family != "gaussian":
            raise ValidationError("percent_change truth applies to gaussian outcomes")
        return float(100.0 * (np.exp(cfg.c_t[0]) - 1.0))
    if target not in ("current", "window"):
        raise ValidationError(f"unsupported effect descriptor '{target}'")

    if cfg.family == "gaussian":
        if target == "current":
            return float(cfg.c_t[0])
        # forced window also moves x through the feedback channel
        feedback = (
            cfg.gamma * (1 - cfg.rho ** (M - 1)) / (1 - cfg.rho) if M > 1 else 0.0
        )
        return float(np.sum(cfg.c_t) + cfg.c_x * feedback)

    if cfg.c_x == 0.0 and cfg.c_alpha == 0.0 and M == 1:
        return float(expit(cfg.c0 + cfg.c_t[0]) - expit(cfg.c0))

    rng = np.random.default_rng(seed)
    J = cfg.n_periods
    j_lo = max(j_min, M)
    total = 0.0
    count = 0
    for _ in range(mc_draws):
        alpha_t, alpha_x, X, T, eps = _simulate_paths(cfg, rng, cfg.n_units)
        base = cfg.c0 + cfg.c_alpha * alpha_t
        if target == "current":
            other = np.zeros((cfg.n_units, J))
            cols = np.arange(1, J + 1)
            for m, coef in enumerate(cfg.c_t[1:], start=1):
                src = cols - m
                valid = src >= 0
                other[:, valid] += coef * T[:, src[valid]]
            eta0 = base[:, None] + cfg.c_x * X[:, 1:] + other
            contrast = expit(eta0 + cfg.c_t[0]) - expit(eta0)
            sel = contrast[:, j_lo - 1 :]
            total += sel.sum()
            count += sel.size
        else:
            csum = float(np.sum(cfg.c_t))
            for j in range(j_lo, J + 1):
                etas = []
                for arm in (1.0, 0.0):
                    xf = X[:, j - M + 1]
                    for s in range(j - M + 2, j + 1):
                        xf = cfg.rho * xf + cfg.gamma * arm + alpha_x + eps[:, s]
                    etas.append(base + csum * arm + cfg.c_x * xf)
                contrast = expit(etas[0]) - expit(etas[1])
                total += contrast.sum()
                count += contrast.size
    return float(total / count)


_PRESETS = {
    # no causal effect; confounding machinery fully active
    "null": DgpConfig(
        n_units=400,
        n_periods=48,
        alpha_sd=0.8,
        rho=0.35,
        gamma=0.05,
        a0=-0.6,
        a_lag=0.05,
        b_x=0.55,
        c0=-0.6,
        c_t=(0.0,),
        c_x=0.35,
        c_alpha=0.0,
        alpha_x_sd=0.0,
        seed=101,
    ),
    # strong confounding through x; the naive comparator is badly biased
    # while weighting recovers the marginal truth.  Confounding is kept
    # within-unit (alpha_x_sd = 0): the numerator's unit intercepts absorb
    # whatever is cross-unit, so only the within part is reweighted away.
    "confounded-hard": DgpConfig(
        n_units=500,
        n_periods=60,
        alpha_sd=0.8,
        rho=0.35,
        gamma=0.05,
        a0=-0.6,
        a_lag=0.05,
        b_x=0.55,
        c0=-0.7,
        c_t=(0.7,),
        c_x=0.35,
        c_alpha=0.0,
        alpha_x_sd=0.0,
        seed=204,
    ),
    # occasional treatment, rare-ish outcome, tame weights
    "realism": DgpConfig(
        n_units=300,
        n_periods=65,
        alpha_sd=0.6,
        rho=0.5,
        gamma=0.25,
        a0=-2.0,
        a_lag=0.6,
        b_x=0.4,
        c0=-2.0,
        c_t=(0.3,),
        c_x=0.3,
        c_alpha=0.3,
        seed=303,
    ),
    # propensities pushed against the boundary: strong persistent x driving
    # assignment hard enough that weight tails dominate, while the fit
    # itself stays estimable
    "positivity-violation": DgpConfig(
        n_units=300,
        n_periods=40,
        alpha_sd=1.0,
        rho=0.8,
        gamma=0.3,
        a0=0.0,
        a_lag=0.6,
        b_x=1.8,
        c0=-0.5,
        c_t=(0.6,),
        c_x=0.7,
        c_alpha=0.0,
        seed=404,
    ),
}


def preset(name: str, **overrides) -> DgpConfig:
    """Named DgpConfig presets; keyword overrides replace fields."""
    if name not in _PRESETS:
        raise ValidationError(
            f"unknown preset '{name}'; available: {sorted(_PRESETS)}"
        )
    cfg = _PRESETS[name]
    return replace(cfg, **overrides) if overrides else cfg
