"""Identification of fractional-order dynamical networks with latent nodes.

Jointly estimates latent-node trajectories (long-memory Kalman filtering),
sparse unknown inputs (L1-penalized per-step solves), and all coupling,
input, and noise parameters (alternating closed-form updates), then scores
k-step predictions against a no-latent baseline.
"""

__version__ = "0.1.0"

from .backend import BACKEND
from .em import EMConfig, EStepQuantities, FitReport, fit, m_step, q_value
from .evaluate import (
    ComparisonResult,
    PredictionReport,
    SweepSpec,
    SweepResult,
    estimate_fractional_orders,
    predict_k_steps,
    relative_error,
    rolling_prediction_report,
    run_latent_comparison,
    run_reveal_sweep,
)
from .exceptions import (
    CovarianceError,
    DataFormatError,
    DimensionMismatchError,
    FracnetidError,
    NumericalSingularityError,
    SingularSystemError,
    UnidentifiableInputError,
)
from .fracops import GLKernel, build_kernel, frac_diff, frac_diff_values, gl_coeff
from .inputs import (
    InputProblem,
    InputSolution,
    estimate_all_inputs,
    lambda_max,
    solve_input,
)
from .kalman import FilterResult, run_filter
from .model import (
    BaselineFit,
    InputSequence,
    ModelParams,
    TimeSeriesMatrix,
    baseline_fit_no_latent,
    simulate,
)

__all__ = [
    "BACKEND",
    "BaselineFit",
    "ComparisonResult",
    "CovarianceError",
    "DataFormatError",
    "DimensionMismatchError",
    "EMConfig",
    "EStepQuantities",
    "FilterResult",
    "FitReport",
    "FracnetidError",
    "GLKernel",
    "InputProblem",
    "InputSequence",
    "InputSolution",
    "ModelParams",
    "NumericalSingularityError",
    "PredictionReport",
    "SingularSystemError",
    "SweepSpec",
    "SweepResult",
    "TimeSeriesMatrix",
    "UnidentifiableInputError",
    "baseline_fit_no_latent",
    "build_kernel",
    "estimate_all_inputs",
    "estimate_fractional_orders",
    "fit",
    "frac_diff",
    "frac_diff_values",
    "gl_coeff",
    "lambda_max",
    "m_step",
    "predict_k_steps",
    "q_value",
    "relative_error",
    "rolling_prediction_report",
    "run_filter",
    "run_latent_comparison",
    "run_reveal_sweep",
    "simulate",
    "solve_input",
]
