"""Full- and reduced-order optimal control of a convective excitable medium.

SIPG discontinuous Galerkin discretization, backward-Euler/Newton forward
and adjoint solvers, POD / POD-DEIM / POD-DMD reductions, and a projected
conjugate-gradient optimizer under box control constraints.
"""

__version__ = "0.1.0"

from .assembly import (
    DgSpace,
    Operators,
    assemble_operators,
    eval_nonlinearity,
    eval_nonlinearity_rows,
    mass_matrix,
    project_initial,
)
from .fom import (
    ControlGrid,
    FhnParams,
    SolverError,
    Trajectory,
    control_inner,
    cost,
    gradient,
    solve_adjoint,
    solve_state,
)
from .harness import (
    ComparisonReport,
    ExperimentConfig,
    coarse_preset,
    frobenius_error,
    mode_sweep,
    run_experiment,
    setup_problem,
    write_report,
)
from .mesh import Mesh, MeshError, build_uniform_mesh, classify_flow, velocity
from .optimize import ControlProblem, OptimizeConfig, OptimizeReport, minimize, project_box
from .reduction import (
    DeimModel,
    DmdModel,
    PodBasis,
    ReductionError,
    SnapshotSet,
    build_deim,
    build_dmd,
    build_pod,
)
from .rom import (
    ReducedOperators,
    ReducedTrajectory,
    lift,
    project_state,
    reduce_operators,
    reduced_cost,
    reduced_cost_and_gradient,
    solve_reduced_adjoint,
    solve_reduced_state,
)

__all__ = [
    "__version__",
    "DgSpace", "Operators", "assemble_operators", "eval_nonlinearity",
    "eval_nonlinearity_rows", "mass_matrix", "project_initial",
    "ControlGrid", "FhnParams", "SolverError", "Trajectory", "control_inner",
    "cost", "gradient", "solve_adjoint", "solve_state",
    "ComparisonReport", "ExperimentConfig", "coarse_preset", "frobenius_error",
    "mode_sweep", "run_experiment", "setup_problem", "write_report",
    "Mesh", "MeshError", "build_uniform_mesh", "classify_flow", "velocity",
    "ControlProblem", "OptimizeConfig", "OptimizeReport", "minimize", "project_box",
    "DeimModel", "DmdModel", "PodBasis", "ReductionError", "SnapshotSet",
    "build_deim", "build_dmd", "build_pod",
    "ReducedOperators", "ReducedTrajectory", "lift", "project_state",
    "reduce_operators", "reduced_cost", "reduced_cost_and_gradient",
    "solve_reduced_adjoint", "solve_reduced_state",
]
