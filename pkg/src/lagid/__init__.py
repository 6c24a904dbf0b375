"""Sparse Lagrangian identification from noisy trajectories.

The pipeline: simulate or load second-order trajectories (dynamics),
represent each coordinate as a clamped cubic B-spline (bspline), expand
Euler-Lagrange residuals of a candidate-term library (library), jointly
fit control points and sparse coefficients at collocation points
(identify), and score recovered models against ground truth (metrics).
The cli module batches all of it into reproducible experiment runs.
"""

from .bspline import (
    BasisMatrices,
    KnotVector,
    SplineModel,
    assemble_matrices,
    build_clamped_knots,
    default_control_count,
    eval_curve,
    local_basis,
)
from .cli import ExperimentConfig, main
from .dynamics import (
    Dataset,
    SystemSpec,
    Trajectory,
    basin_of_attraction,
    energy,
    euler_lagrange_rhs,
    load_dataset,
    make_dataset,
    make_system,
    rk4_simulate,
    sample_initial_conditions,
    save_dataset,
    trajectory_accelerations,
)
from .errors import (
    BlowUpError,
    ConfigError,
    DegenerateMassMatrixError,
    DivergenceError,
    DomainError,
    EmptyModelError,
    InitializationError,
    LagidError,
    NonFiniteLossError,
    ShapeError,
    UndefinedMetricError,
)
from .identify import (
    CoefficientVector,
    FitReport,
    LossWeights,
    OptimizerConfig,
    StlsConfig,
    fit,
    init_control_points,
    physics_residual,
    render_expression,
    total_loss,
)
from .library import CandidateLibrary, CandidateTerm, LibraryJet, eval_library
from .metrics import EvalResult, TermRow, align_scale, evaluate

__version__ = "0.1.0"

__all__ = [
    "BasisMatrices", "KnotVector", "SplineModel", "assemble_matrices",
    "build_clamped_knots", "default_control_count", "eval_curve",
    "local_basis",
    "ExperimentConfig", "main",
    "Dataset", "SystemSpec", "Trajectory", "basin_of_attraction", "energy",
    "euler_lagrange_rhs", "load_dataset", "make_dataset", "make_system",
    "rk4_simulate", "sample_initial_conditions", "save_dataset",
    "trajectory_accelerations",
    "BlowUpError", "ConfigError", "DegenerateMassMatrixError",
    "DivergenceError", "DomainError", "EmptyModelError",
    "InitializationError", "LagidError", "NonFiniteLossError", "ShapeError",
    "UndefinedMetricError",
    "CoefficientVector", "FitReport", "LossWeights", "OptimizerConfig",
    "StlsConfig", "fit", "init_control_points", "physics_residual",
    "render_expression", "total_loss",
    "CandidateLibrary", "CandidateTerm", "LibraryJet", "eval_library",
    "EvalResult", "TermRow", "align_scale", "evaluate",
    "__version__",
]
