"""River discharge as a superposition of CBI processes.

Library layout: measures (Gamma mixing and tempered stable Levy measures),
lift (quantile Markovian lift), process (model, stationary moments, ACF,
exact simulation), control (closed-form ergodic control and BKE residual
certification), identify (two-stage calibration), cli (batch command line).
"""

from .control import (
    ControlProblem,
    ControlSolution,
    InfeasibleProblem,
    bke_residual_J,
    bke_residual_K,
    continuum_J_K_P,
    eval_J,
    eval_K,
    eval_P,
    p_bounds,
    q_from_target,
    solve,
    solve_hbar,
    sweep,
)
from .identify import (
    DischargeSeries,
    FitReport,
    empirical_acf,
    fit_acf,
    fit_moments,
    read_series_csv,
)
from .lift import MarkovianLift, build_lift, convergence_report, lift_inv_mean
from .measures import (
    GammaMixingMeasure,
    TemperedStableLevy,
    inv_mean,
    levy_moment,
    pi_quantile,
)
from .process import (
    Controller,
    SimulatedPath,
    SupCbiModel,
    acf_gamma,
    acf_lift,
    path_stats,
    simulate,
    stationary_mean,
    stationary_variance,
)

__version__ = "0.1.0"

__all__ = [
    "ControlProblem",
    "ControlSolution",
    "Controller",
    "DischargeSeries",
    "FitReport",
    "GammaMixingMeasure",
    "InfeasibleProblem",
    "MarkovianLift",
    "SimulatedPath",
    "SupCbiModel",
    "TemperedStableLevy",
    "acf_gamma",
    "acf_lift",
    "bke_residual_J",
    "bke_residual_K",
    "build_lift",
    "continuum_J_K_P",
    "convergence_report",
    "empirical_acf",
    "eval_J",
    "eval_K",
    "eval_P",
    "fit_acf",
    "fit_moments",
    "inv_mean",
    "levy_moment",
    "lift_inv_mean",
    "p_bounds",
    "path_stats",
    "pi_quantile",
    "q_from_target",
    "read_series_csv",
    "simulate",
    "solve",
    "solve_hbar",
    "stationary_mean",
    "stationary_variance",
    "sweep",
]
