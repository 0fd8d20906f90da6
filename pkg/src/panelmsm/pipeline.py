"""End-to-end estimation pipeline: config, ingestion, orchestration, outputs.

A run goes: load panel -> apply column transforms -> build lags and trend ->
fit treatment models on the complete-case frame -> predict stabilized
windowed weights over the full panel -> truncate -> fit the weighted outcome
model -> cluster bootstrap -> optional sensitivity and positivity passes.
Every artifact lands in an output directory as delimited text plus a plain
run log; nothing in the outputs depends on wall-clock time, so reruns with
the same config and data are byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from . import feglm
from .balance import BalanceReport, balance_report, ess
from .bootstrap import BootstrapResult, pairs_cluster_bootstrap
from .errors import ConfigError, ValidationError
from .outcome import (
    EffectEstimate,
    OutcomeSpec,
    fit_msm,
    incremental_effect,
    percent_change,
)
from .panel import (
    PanelDataset,
    binarize_any,
    build_lag,
    complete_case_filter,
    cumulative_sum,
    validate_panel,
)
from .sensitivity import (
    PositivityDiagnostic,
    SensitivityCurve,
    phi_sweep,
    positivity_bootstrap,
)
from .weights import (
    WeightConfig,
    WeightSeries,
    add_time_trend,
    fit_treatment_models,
    stabilized_weights,
    treatment_lag_names,
    truncate_weights,
)

SCHEMA_VERSION = 1

_Z975 = float(stats.norm.ppf(0.975))


@dataclass(frozen=True)
class Roles:
    """Mapping from on-disk column names to their roles in the analysis."""

    unit: str = "unit"
    time: str = "time"
    treatment: str = "treat"
    outcome: str = "y"
    covariates: tuple[str, ...] = ()
    province: str | None = None
    cluster: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "covariates", tuple(self.covariates))


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; built from a JSON document or kwargs."""

    roles: Roles = field(default_factory=Roles)
    data_path: str | None = None
    transforms: tuple[Mapping, ...] = ()
    weights: WeightConfig = field(default_factory=WeightConfig)
    family: str = "logistic"
    treatment_terms: tuple[str, ...] | None = None
    bootstrap_b: int = 200
    seed: int | None = None
    phis: tuple[float, ...] | None = None
    sweep_engine: str = "logistic"
    sweep_b: int | None = None
    positivity_b: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "transforms", tuple(self.transforms))
        if self.roles.covariates and not self.weights.covariates:
            object.__setattr__(
                self,
                "weights",
                dataclasses.replace(self.weights, covariates=self.roles.covariates),
            )
        if self.treatment_terms is not None:
            object.__setattr__(self, "treatment_terms", tuple(self.treatment_terms))
        if self.phis is not None:
            object.__setattr__(self, "phis", tuple(float(p) for p in self.phis))
        if self.seed is None:
            raise ConfigError("inference seed is required; set inference.seed")
        if self.family not in ("logistic", "gaussian"):
            raise ConfigError(f"unknown outcome family '{self.family}'")
        if self.sweep_engine not in ("logistic", "gaussian"):
            raise ConfigError(f"unknown sweep engine '{self.sweep_engine}'")
        if self.bootstrap_b < 1:
            raise ConfigError("inference.bootstrap must be at least 1")

    @property
    def terms(self) -> tuple[str, ...]:
        return self.treatment_terms or (self.roles.treatment,)


_TOP_KEYS = {
    "schema_version",
    "data",
    "transforms",
    "weights",
    "outcome_model",
    "inference",
    "sensitivity",
    "positivity",
}


def config_from_dict(doc: Mapping) -> RunConfig:
    """Build a RunConfig from a parsed JSON document, rejecting unknown keys."""
    if not isinstance(doc, Mapping):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"config schema_version must be {SCHEMA_VERSION}, got {version!r}"
        )

    data = doc.get("data", {})
    roles = Roles(
        unit=data.get("unit", "unit"),
        time=data.get("time", "time"),
        treatment=data.get("treatment", "treat"),
        outcome=data.get("outcome", "y"),
        covariates=tuple(data.get("covariates", ())),
        province=data.get("province"),
        cluster=data.get("cluster"),
    )

    wdoc = doc.get("weights", {})
    trunc = wdoc.get("truncate", (1.0, 99.0))
    if not (isinstance(trunc, Sequence) and len(trunc) == 2):
        raise ConfigError("weights.truncate must be a [lower_pct, upper_pct] pair")
    wcfg = WeightConfig(
        k=int(wdoc.get("window", 4)),
        lower_pct=float(trunc[0]),
        upper_pct=float(trunc[1]),
        fe_level=wdoc.get("fe_level", "unit"),
        treatment_lags=int(wdoc.get("treatment_lags", 3)),
        covariates=roles.covariates,
    )

    odoc = doc.get("outcome_model", {})
    idoc = doc.get("inference", {})
    sdoc = doc.get("sensitivity", {})
    pdoc = doc.get("positivity", {})
    return RunConfig(
        roles=roles,
        data_path=data.get("path"),
        transforms=tuple(doc.get("transforms", ())),
        weights=wcfg,
        family=odoc.get("family", "logistic"),
        treatment_terms=(
            tuple(odoc["terms"]) if odoc.get("terms") is not None else None
        ),
        bootstrap_b=int(idoc.get("bootstrap", 200)),
        seed=idoc.get("seed"),
        phis=tuple(sdoc["phis"]) if sdoc.get("phis") is not None else None,
        sweep_engine=sdoc.get("engine", "logistic"),
        sweep_b=int(sdoc["bootstrap"]) if sdoc.get("bootstrap") is not None else None,
        positivity_b=(
            int(pdoc["bootstrap"]) if pdoc.get("bootstrap") is not None else None
        ),
    )


def config_from_json(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def load_panel(path: str | Path, roles: Roles) -> PanelDataset:
    """Read a delimited panel and normalize role columns.

    Role columns are renamed to canonical names ('unit', 'time', treatment
    and outcome keep their configured names). Numeric coercion failures are
    reported with the column, offending value, and 1-based file row.
    """
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"data file not found: {p}")
    f = pd.read_csv(p)
    needed = [roles.unit, roles.time, roles.treatment, roles.outcome,
              *roles.covariates]
    if roles.province:
        needed.append(roles.province)
    if roles.cluster:
        needed.append(roles.cluster)
    missing = [c for c in needed if c not in f.columns]
    if missing:
        raise ConfigError(f"data file {p} is missing columns: {missing}")

    numeric = [roles.time, roles.treatment, roles.outcome, *roles.covariates]
    for c in numeric:
        raw = f[c]
        coerced = pd.to_numeric(raw, errors="coerce")
        bad = coerced.isna() & raw.notna()
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise ValidationError(
                f"column '{c}' has non-numeric value {raw.iloc[i]!r} "
                f"at file row {i + 2}"
            )
        f[c] = coerced

    rename = {}
    if roles.unit != "unit":
        rename[roles.unit] = "unit"
    if roles.time != "time":
        rename[roles.time] = "time"
    f = f.rename(columns=rename)
    return PanelDataset(
        f,
        cluster_col=(roles.cluster or "unit")
        if roles.cluster != roles.unit
        else "unit",
        province_col=roles.province,
    )


def apply_transforms(d: PanelDataset, transforms: Sequence[Mapping]) -> PanelDataset:
    """Run the configured column derivations in order."""
    for i, t in enumerate(transforms):
        op = t.get("op")
        col = t.get("col")
        if not op or not col:
            raise ConfigError(f"transform #{i + 1} needs 'op' and 'col' keys: {t}")
        if op == "lag":
            d = build_lag(d, col, int(t.get("k", 1)))
        elif op == "lead":
            d = build_lag(d, col, -int(t.get("k", 1)))
        elif op == "square":
            d.require_columns([col])
            v = d.frame[col].to_numpy(dtype=float)
            d = d.with_columns({t.get("name", f"{col}_sq"): v * v})
        elif op == "binarize":
            d = binarize_any(d, col, t.get("name"))
        elif op == "cumsum":
            d = cumulative_sum(d, col, t.get("name"))
        else:
            raise ConfigError(f"transform #{i + 1} has unknown op '{op}'")
    return d


def prepare_dataset(d: PanelDataset, cfg: RunConfig) -> PanelDataset:
    """Transforms, quadratic trend, and treatment-lag columns on the full panel."""
    d = apply_transforms(d, cfg.transforms)
    d = add_time_trend(d)
    for m in range(1, cfg.weights.treatment_lags + 1):
        d = build_lag(d, cfg.roles.treatment, m)
    d.require_columns([cfg.roles.outcome, *cfg.terms, *cfg.weights.covariates])
    return d


@dataclass
class RunArtifacts:
    """Everything a full estimation pass produces."""

    dataset: PanelDataset
    n_dropped: int
    num_fit: feglm.FitResult
    den_fit: feglm.FitResult
    weights: WeightSeries
    msm_fit: feglm.FitResult
    effect: EffectEstimate
    boot: BootstrapResult
    balance: BalanceReport
    naive: EffectEstimate


def _estimate_once(cfg: RunConfig, d: PanelDataset) -> dict:
    """One full pass from a raw-ish panel to the fitted outcome model."""
    dd = prepare_dataset(d, cfg)
    treatment = cfg.roles.treatment
    model_cols = [
        treatment,
        *treatment_lag_names(treatment, cfg.weights.treatment_lags),
        *cfg.weights.covariates,
    ]
    fit_frame, n_dropped = complete_case_filter(dd, model_cols)
    num_fit, den_fit = fit_treatment_models(fit_frame, treatment, cfg.weights)
    ws = stabilized_weights(dd, num_fit, den_fit, cfg.weights)
    ws = truncate_weights(ws, cfg.weights)
    ospec = OutcomeSpec(
        outcome=cfg.roles.outcome,
        treatment_terms=cfg.terms,
        family=cfg.family,
        weights=ws.truncated,
    )
    msm = fit_msm(dd, ospec)
    return {
        "dataset": dd,
        "n_dropped": n_dropped,
        "num_fit": num_fit,
        "den_fit": den_fit,
        "weights": ws,
        "msm_fit": msm,
        "spec": ospec,
    }


def make_estimator(cfg: RunConfig, statistic: str = "coefficient"):
    """Closure re-running the whole pipeline on any panel, returning one number.

    Treatment lags, trend columns, and transform outputs are rebuilt from the
    raw columns on every call, so the closure stays correct on resampled or
    resimulated inputs whose derived columns are stale.
    """
    if statistic not in ("coefficient", "incremental_pp"):
        raise ConfigError(f"unknown statistic '{statistic}'")
    focal = cfg.terms[0]

    def run(d: PanelDataset) -> float:
        parts = _estimate_once(cfg, d)
        msm = parts["msm_fit"]
        if statistic == "coefficient":
            return float(msm.params[list(msm.spec.terms).index(focal)])
        return incremental_effect(
            msm, parts["dataset"], weights=parts["weights"].truncated, focal=focal
        )

    return run


def _effect_from_boot(
    cfg: RunConfig, parts: dict, boot: BootstrapResult, name: str
) -> EffectEstimate:
    msm = parts["msm_fit"]
    dd = parts["dataset"]
    w = parts["weights"].truncated
    rows = msm.row_index
    n_units = int(dd.frame["unit"].iloc[rows].nunique())
    _, ess_pct = ess(w[rows])
    if cfg.family == "logistic":
        incr = incremental_effect(msm, dd, weights=w, focal=cfg.terms[0])
        pct = float("nan")
    else:
        incr = float("nan")
        pct = percent_change(msm, focal=cfg.terms[0])
    se = boot.se
    est = boot.estimate
    return EffectEstimate(
        coefficient=est,
        incremental_effect=incr,
        se=se,
        ci_low=boot.ci_low,
        ci_high=boot.ci_high,
        p_value=boot.p_value,
        n_obs=msm.n_obs,
        n_units=n_units,
        ess_percent=ess_pct,
        ci_low_normal=est - _Z975 * se if np.isfinite(se) else float("nan"),
        ci_high_normal=est + _Z975 * se if np.isfinite(se) else float("nan"),
        percent_change=pct,
        name=name,
    )


def _naive_effect(cfg: RunConfig, parts: dict) -> EffectEstimate:
    """Unweighted pooled comparator on the same estimation rows."""
    dd = parts["dataset"]
    msm = parts["msm_fit"]
    present = np.zeros(dd.n_rows, dtype=bool)
    present[msm.row_index] = True
    w_marker = np.where(present, 1.0, np.nan)
    ospec = OutcomeSpec(
        outcome=cfg.roles.outcome,
        treatment_terms=cfg.terms,
        family=cfg.family,
        weights=w_marker,
    )
    fit = fit_msm(dd, ospec)
    focal = cfg.terms[0]
    coef = float(fit.params[list(fit.spec.terms).index(focal)])
    if cfg.family == "logistic":
        incr = incremental_effect(fit, dd, focal=focal)
        pct = float("nan")
    else:
        incr = float("nan")
        pct = percent_change(fit, focal=focal)
    nan = float("nan")
    return EffectEstimate(
        coefficient=coef,
        incremental_effect=incr,
        se=nan,
        ci_low=nan,
        ci_high=nan,
        p_value=nan,
        n_obs=fit.n_obs,
        n_units=int(dd.frame["unit"].iloc[fit.row_index].nunique()),
        ess_percent=100.0,
        ci_low_normal=nan,
        ci_high_normal=nan,
        percent_change=pct,
        name="naive_unweighted",
    )


def run_estimation(cfg: RunConfig, d: PanelDataset) -> RunArtifacts:
    """Full pass plus cluster bootstrap, balance table, and naive comparator."""
    parts = _estimate_once(cfg, d)
    estimator = make_estimator(cfg)
    boot = pairs_cluster_bootstrap(
        estimator, d, B=cfg.bootstrap_b, seed=cfg.seed
    )
    effect = _effect_from_boot(cfg, parts, boot, name="msm")

    dd = parts["dataset"]
    ws = parts["weights"]
    treated = dd.frame[cfg.roles.treatment].to_numpy(dtype=float)
    wmask = np.isfinite(ws.truncated)
    p_den = feglm.predict(parts["den_fit"], dd)
    ps_ok = wmask & np.isfinite(p_den)
    covs = {
        c: dd.frame[c].to_numpy(dtype=float)[wmask] for c in cfg.weights.covariates
    }
    bal = balance_report(
        covariate_arrays=covs,
        treated=treated[wmask],
        raw_weights=ws.raw[wmask],
        truncated_weights=ws.truncated[wmask],
        ps_treated=p_den[ps_ok & (treated == 1)],
        ps_control=p_den[ps_ok & (treated == 0)],
    )
    naive = _naive_effect(cfg, parts)
    return RunArtifacts(
        dataset=dd,
        n_dropped=parts["n_dropped"],
        num_fit=parts["num_fit"],
        den_fit=parts["den_fit"],
        weights=ws,
        msm_fit=parts["msm_fit"],
        effect=effect,
        boot=boot,
        balance=bal,
        naive=naive,
    )


def run_sensitivity(cfg: RunConfig, arts: RunArtifacts) -> SensitivityCurve:
    spec = OutcomeSpec(
        outcome=cfg.roles.outcome,
        treatment_terms=cfg.terms,
        family=cfg.family,
        weights=arts.weights.truncated,
    )
    return phi_sweep(
        arts.dataset,
        spec,
        arts.den_fit,
        phis=cfg.phis,
        B=cfg.sweep_b or cfg.bootstrap_b,
        seed=cfg.seed,
        engine=cfg.sweep_engine,
    )


def run_positivity(cfg: RunConfig, arts: RunArtifacts) -> PositivityDiagnostic:
    estimator = make_estimator(cfg)
    return positivity_bootstrap(
        arts.dataset,
        arts.num_fit,
        arts.den_fit,
        arts.msm_fit,
        estimator,
        base_se=arts.boot.se,
        base_ci=arts.boot.ci,
        B=cfg.positivity_b or cfg.bootstrap_b,
        seed=cfg.seed,
    )


def _effects_frame(effects: Sequence[EffectEstimate]) -> pd.DataFrame:
    cols = [
        "model",
        "coefficient",
        "se",
        "ci_low",
        "ci_high",
        "ci_low_normal",
        "ci_high_normal",
        "p_value",
        "incremental_pp",
        "percent_change",
        "n_obs",
        "n_units",
        "ess_percent",
    ]
    rows = []
    for e in effects:
        rows.append(
            {
                "model": e.name,
                "coefficient": e.coefficient,
                "se": e.se,
                "ci_low": e.ci_low,
                "ci_high": e.ci_high,
                "ci_low_normal": e.ci_low_normal,
                "ci_high_normal": e.ci_high_normal,
                "p_value": e.p_value,
                "incremental_pp": e.incremental_effect,
                "percent_change": e.percent_change,
                "n_obs": e.n_obs,
                "n_units": e.n_units,
                "ess_percent": e.ess_percent,
            }
        )
    return pd.DataFrame(rows, columns=cols)


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    # Readable table at 6 significant digits plus a full-precision companion
    # (.full.csv) so downstream regression fixtures do not lose bits.
    frame.to_csv(path, index=False, float_format="%.6g", lineterminator="\n")
    full = path.with_name(path.stem + ".full" + path.suffix)
    frame.to_csv(full, index=False, float_format="%.17g", lineterminator="\n")


def _run_log(cfg: RunConfig, arts: RunArtifacts) -> str:
    prov = arts.weights.provenance
    e = arts.effect
    lines = [
        "panel marginal-structural-model run",
        f"rows: {arts.dataset.n_rows} "
        f"({arts.n_dropped} dropped from treatment-model frame)",
        f"units: {arts.dataset.n_units}",
        f"treatment model fe_level: {cfg.weights.fe_level}",
        f"numerator: converged={arts.num_fit.converged} "
        f"iterations={arts.num_fit.iterations} "
        f"dropped_groups={len(arts.num_fit.dropped_groups)}",
        f"denominator: converged={arts.den_fit.converged} "
        f"iterations={arts.den_fit.iterations} "
        f"dropped_groups={len(arts.den_fit.dropped_groups)}",
        f"weights: window={prov['k']} truncation="
        f"[{prov['lower_pct']:g}, {prov['upper_pct']:g}] pct "
        f"bounds=[{prov['q_low']:.6g}, {prov['q_high']:.6g}]",
        f"estimation sample: n_obs={e.n_obs} n_units={e.n_units} "
        f"ess={e.ess_percent:.4g}%",
        f"effect ({e.name}): coefficient={e.coefficient:.6g} se={e.se:.6g} "
        f"ci=[{e.ci_low:.6g}, {e.ci_high:.6g}] p={e.p_value:.4g}",
        f"naive comparator: coefficient={arts.naive.coefficient:.6g}",
        f"bootstrap: B={cfg.bootstrap_b} seed={cfg.seed} "
        f"failed={arts.boot.n_failed}",
    ]
    return "\n".join(lines) + "\n"


def run_pipeline(
    cfg: RunConfig,
    d: PanelDataset,
    out_dir: str | Path,
    sensitivity: bool = False,
    positivity: bool = False,
) -> RunArtifacts:
    """Run everything requested and write the artifact files.

    Always writes weights.csv, balance.csv, results.csv, and run.log;
    sensitivity.csv and positivity.txt are written when their passes are
    requested. Raises on any failure; callers map exceptions to exit codes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    validate_panel(d, binary_cols=(), strict=True)
    arts = run_estimation(cfg, d)

    _write_csv(arts.weights.table, out / "weights.csv")
    _write_csv(arts.balance.to_frame(), out / "balance.csv")
    _write_csv(_effects_frame([arts.effect, arts.naive]), out / "results.csv")
    (out / "run.log").write_text(_run_log(cfg, arts))

    if sensitivity:
        curve = run_sensitivity(cfg, arts)
        _write_csv(curve.to_frame(), out / "sensitivity.csv")
    if positivity:
        diag = run_positivity(cfg, arts)
        (out / "positivity.txt").write_text(diag.summary() + "\n")
    return arts
