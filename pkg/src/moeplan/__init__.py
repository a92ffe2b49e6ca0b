"""Mixture-of-Experts architecture planning.

Parameter accounting, log-log scaling-law regression, Chinchilla-form curve
fitting and budget-constrained configuration search.
"""

from .accounting import (
    ModelDims,
    ParamBudget,
    SparsityStats,
    active_params,
    active_ratio_formula,
    budget_deviation,
    granularity_variants,
    param_budget,
    solve_experts_for_budget,
    sparsity_stats,
    total_params,
)
from .chinchilla import (
    ChinchillaFit,
    CurvePoint,
    chinchilla_eval,
    compare_configs,
    fit_chinchilla,
    huber,
    objective,
)
from .optimizer import (
    ConfigCandidate,
    Constraints,
    PlanResult,
    brute_force_optimize,
    compare_with_oracle,
    loss_proxy,
    optimize,
)
from .regression import (
    ExperimentRecord,
    FeatureSpec,
    FitReport,
    build_design_matrix,
    fit_power_law,
    model_selection,
    ols_fit,
    predict_log_loss,
    sparsity_form,
    student_t_sf,
)

__version__ = "0.1.0"
