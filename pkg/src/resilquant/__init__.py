"""resilquant: quantify system resilience from performance time series."""

from .errors import ResilquantError
from .fitting import (
    FastFitHyperparams,
    PiecewiseConstantFit,
    detect_attack_window,
    detect_switch_time,
    fast_fit_phase1,
    fast_fit_phase2,
    fit_ratio_curve,
    model_curve,
    refine_least_squares,
)
from .metrics import (
    UtilityWeights,
    auc,
    bootstrap_ci,
    ratio_curve,
    resilience_r,
    weighted_resilience,
)
from .model import (
    ConstantImpact,
    ImpactKind,
    ImpactProfile,
    LinearImpact,
    ModelState,
    eval_constant,
    eval_piecewise_constant,
    sample_curve,
    steady_state,
)
from .numerics import TimeSeries, Tolerance, running_median
from .report import (
    FitPhase,
    FitSummary,
    ReportEntry,
    ResilienceReport,
    SignalMeasure,
    read_report,
    read_tables,
    render_figures,
    write_report,
    write_tables,
)
from .synth import (
    Attack,
    AttackPreset,
    Condition,
    GridDesign,
    Terrain,
    Truck,
    baseline_profile,
    driver_drift,
    generate_grid,
    load_design,
    synthesize_run,
)

__version__ = "0.1.0"

__all__ = [
    "ResilquantError",
    "TimeSeries",
    "Tolerance",
    "running_median",
    "ConstantImpact",
    "ImpactKind",
    "ImpactProfile",
    "LinearImpact",
    "ModelState",
    "eval_constant",
    "eval_piecewise_constant",
    "sample_curve",
    "steady_state",
    "UtilityWeights",
    "auc",
    "bootstrap_ci",
    "ratio_curve",
    "resilience_r",
    "weighted_resilience",
    "FastFitHyperparams",
    "PiecewiseConstantFit",
    "detect_attack_window",
    "detect_switch_time",
    "fast_fit_phase1",
    "fast_fit_phase2",
    "fit_ratio_curve",
    "model_curve",
    "refine_least_squares",
    "FitPhase",
    "FitSummary",
    "ReportEntry",
    "ResilienceReport",
    "SignalMeasure",
    "read_report",
    "read_tables",
    "render_figures",
    "write_report",
    "write_tables",
    "Attack",
    "AttackPreset",
    "Condition",
    "GridDesign",
    "Terrain",
    "Truck",
    "baseline_profile",
    "driver_drift",
    "generate_grid",
    "load_design",
    "synthesize_run",
    "__version__",
]
