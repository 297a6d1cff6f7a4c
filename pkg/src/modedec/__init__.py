"""Nonlinear modal decomposition with unknown mode count.

Signals of the form sum_n a_n * phi(x; b_n) are decomposed by minimizing the
consistency radius of source-count hypothesis sheaves built over a conical
parameter space. Exposes the parameter-space primitives, the signal models,
the radius evaluators, the solvers, and a CLI (``decompose`` / ``synth``).
"""

from .conical import (
    VERTEX_TOL,
    ConicalPoint,
    ConicalSpaceSpec,
    canonicalize,
    distance,
    magnitude_norm,
    vertex,
)
from .model import (
    COMPLEX,
    REAL,
    MeasurementCountCheck,
    MeasurementGrid,
    Observation,
    SignalModel,
    check_measurement_count,
    evaluate_S,
    fourier_model,
    spectral_model,
)
from .multiset import (
    SourceMultiset,
    concat,
    include_pad,
    matching_cost,
    multiset_distance,
)
from .objective import gradient_of_objective, objective_value
from .sheaf import (
    JP,
    KP,
    RadiusBreakdown,
    SheafAssignment,
    SheafKind,
    SortingCheck,
    global_consistency_radius,
    lift_truth_to_assignment,
    local_consistency_radius,
    verify_sorting_property,
)
from .solver import (
    CountResult,
    DecompositionReport,
    FixedCountResult,
    InitBox,
    SolverConfig,
    SolverNumericError,
    detect_count,
    solve_fixed_count,
    solve_jp,
    solve_kp_greedy,
)

__version__ = "0.1.0"

__all__ = [
    "COMPLEX",
    "REAL",
    "JP",
    "KP",
    "VERTEX_TOL",
    "ConicalPoint",
    "ConicalSpaceSpec",
    "CountResult",
    "DecompositionReport",
    "FixedCountResult",
    "InitBox",
    "MeasurementCountCheck",
    "MeasurementGrid",
    "Observation",
    "RadiusBreakdown",
    "SheafAssignment",
    "SheafKind",
    "SignalModel",
    "SolverConfig",
    "SolverNumericError",
    "SortingCheck",
    "SourceMultiset",
    "canonicalize",
    "check_measurement_count",
    "concat",
    "detect_count",
    "distance",
    "evaluate_S",
    "fourier_model",
    "global_consistency_radius",
    "gradient_of_objective",
    "include_pad",
    "lift_truth_to_assignment",
    "local_consistency_radius",
    "magnitude_norm",
    "matching_cost",
    "multiset_distance",
    "objective_value",
    "solve_fixed_count",
    "solve_jp",
    "solve_kp_greedy",
    "spectral_model",
    "vertex",
    "verify_sorting_property",
]
