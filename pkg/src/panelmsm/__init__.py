"""Causal effect estimation on panel data via marginal structural models.

Treatment-assignment models with absorbed group intercepts produce
stabilized, windowed, truncated inverse-probability weights; a weighted
pooled outcome model on treatment terms alone gives the effect. Cluster
bootstrap inference, covariate-balance diagnostics, a selection-bias
sweep, a parametric positivity check, and a simulation test bed with a
Monte-Carlo oracle round out the toolkit.
"""

from .balance import (
    BalanceReport,
    balance_report,
    ess,
    higher_moment_balance,
    overlap_coefficient,
    smd,
    weighted_distribution_summary,
)
from .bootstrap import BootstrapResult, pairs_cluster_bootstrap, resample_clusters
from .errors import (
    CollinearityError,
    ConfigError,
    ConvergenceError,
    DroppedGroupWarning,
    EstimationError,
    InferenceError,
    PanelmsmError,
    PositivityError,
    SeparationError,
    UndefinedSMDError,
    UnseenGroupWarning,
    ValidationError,
)
from .feglm import FitResult, ModelSpec, fit, loglik_and_score, predict
from .outcome import (
    EffectEstimate,
    OutcomeSpec,
    fit_msm,
    incremental_effect,
    percent_change,
    twfe_fit,
    window_cumulative_effect,
)
from .panel import (
    PanelDataset,
    ValidationReport,
    binarize_any,
    build_lag,
    complete_case_filter,
    cumulative_sum,
    shift_within_units,
    validate_panel,
)
from .pipeline import (
    Roles,
    RunArtifacts,
    RunConfig,
    config_from_dict,
    config_from_json,
    load_panel,
    make_estimator,
    run_estimation,
    run_pipeline,
)
from .sensitivity import (
    PositivityDiagnostic,
    SensitivityCurve,
    corrected_outcome,
    phi_sweep,
    positivity_bootstrap,
    selection_ramp,
)
from .simulate import DgpConfig, generate_panel, oracle_truth, preset
from .weights import (
    WeightConfig,
    WeightSeries,
    add_time_trend,
    fit_treatment_models,
    normalize_weights,
    stabilized_weights,
    truncate_weights,
)

__version__ = "0.1.0"

__all__ = [
    "BalanceReport",
    "BootstrapResult",
    "CollinearityError",
    "ConfigError",
    "ConvergenceError",
    "DgpConfig",
    "DroppedGroupWarning",
    "EffectEstimate",
    "EstimationError",
    "FitResult",
    "InferenceError",
    "ModelSpec",
    "OutcomeSpec",
    "PanelDataset",
    "PanelmsmError",
    "PositivityDiagnostic",
    "PositivityError",
    "Roles",
    "RunArtifacts",
    "RunConfig",
    "SensitivityCurve",
    "SeparationError",
    "UndefinedSMDError",
    "UnseenGroupWarning",
    "ValidationError",
    "ValidationReport",
    "WeightConfig",
    "WeightSeries",
    "add_time_trend",
    "balance_report",
    "binarize_any",
    "build_lag",
    "complete_case_filter",
    "config_from_dict",
    "config_from_json",
    "corrected_outcome",
    "cumulative_sum",
    "ess",
    "fit",
    "fit_msm",
    "fit_treatment_models",
    "generate_panel",
    "higher_moment_balance",
    "incremental_effect",
    "load_panel",
    "loglik_and_score",
    "make_estimator",
    "normalize_weights",
    "oracle_truth",
    "overlap_coefficient",
    "pairs_cluster_bootstrap",
    "percent_change",
    "phi_sweep",
    "positivity_bootstrap",
    "predict",
    "preset",
    "resample_clusters",
    "run_estimation",
    "run_pipeline",
    "selection_ramp",
    "shift_within_units",
    "smd",
    "stabilized_weights",
    "truncate_weights",
    "twfe_fit",
    "validate_panel",
    "weighted_distribution_summary",
    "window_cumulative_effect",
]
