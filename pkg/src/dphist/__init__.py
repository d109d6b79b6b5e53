"""Differentially private measurement of hierarchical counting-query
workloads and nonnegative postprocessing into weighted histograms, with
a Monte-Carlo harness for per-query expected-squared-error benchmarks.
"""

from .core import (
    CountingQuery,
    Histogram,
    QueryGroup,
    Workload,
    evaluate,
    l1_sensitivity,
    l2_sensitivity,
    standard_workload,
)
from .mechanisms import (
    MeasurementSet,
    NoiseSpec,
    PrivacyBudget,
    calibrate,
    clamp_mechanism,
    measure,
    sample,
    trial_rng,
)
from .solvers import (
    InfeasibleProblemError,
    QuadraticFitProblem,
    SolverSettings,
    max_exceed_prob,
    max_order_quantile,
    simplex_water_fill,
    solve_minmax,
    solve_nnls,
    solve_wls,
)

__all__ = [
    "CountingQuery",
    "Histogram",
    "QueryGroup",
    "Workload",
    "evaluate",
    "l1_sensitivity",
    "l2_sensitivity",
    "standard_workload",
    "MeasurementSet",
    "NoiseSpec",
    "PrivacyBudget",
    "calibrate",
    "clamp_mechanism",
    "measure",
    "sample",
    "trial_rng",
    "InfeasibleProblemError",
    "QuadraticFitProblem",
    "SolverSettings",
    "max_exceed_prob",
    "max_order_quantile",
    "simplex_water_fill",
    "solve_minmax",
    "solve_nnls",
    "solve_wls",
]

__version__ = "0.1.0"
