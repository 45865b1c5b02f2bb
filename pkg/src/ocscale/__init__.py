"""Scaling and balancing for indirect optimal control.

The package is organised as a pipeline:

    problem     define or load a problem (states, controls, costs, events)
    scaling     apply units to a problem; map primal and dual data both ways
    solver      indirect shooting: integrate, Newton-solve, densely sample
    conditions  first-order optimality residuals and the verification report
    balance     score trajectory magnitudes and propose better scales
    audit       error bounds for scaling done on a discrete grid

Each module stands alone; this namespace re-exports the names most
programs need so that ``import ocscale`` is usually enough.
"""

from importlib.metadata import PackageNotFoundError, version as _version

from .audit import (
    AuditError,
    DiscreteScalingReport,
    ScaleSequence,
    SensitivityReport,
    additional_dynamics,
    discrete_scaling_error,
    eigenvalues,
    matrix_spectral_radius,
    sensitivity_invariance,
    spectral_radius,
)
from .balance import (
    BalanceError,
    BalanceStep,
    MagnitudeReport,
    balance_iterate,
    magnitude_report,
    propose_scales,
)
from .conditions import (
    ConditionsError,
    MinimizeError,
    ToleranceSet,
    VerificationReport,
    adjoint_rhs,
    hamiltonian,
    lagrangian_hamiltonian,
    minimize_hamiltonian,
    stationarity,
    verify,
)
from .problem import (
    DualTrajectory,
    OCProblem,
    ProblemError,
    Trajectory,
    UnitSystem,
    brachistochrone,
    load_dual,
    load_problem,
    load_trajectory,
    save_dual,
    save_problem,
    save_trajectory,
)
from .scaling import (
    BUILTIN_SCALE_SETS,
    CovectorScales,
    ScaleError,
    ScaleSet,
    builtin_scale_set,
    covector_scales,
    descale_dual,
    descale_primal,
    identity_scales,
    load_scale_set,
    rescale_dual,
    rescale_primal,
    save_scale_set,
    scale_problem,
)
from .solver import (
    IntegratorOptions,
    NewtonOptions,
    NewtonResult,
    SolveResult,
    SolverError,
    propagate_with_control,
    solve_bvp,
    solve_bvp_full,
)

try:
    __version__ = _version("ocscale")
except PackageNotFoundError:  # running from a source tree without install
    __version__ = "0.0.0"

__all__ = [
    "__version__",
    # problem
    "ProblemError",
    "UnitSystem",
    "OCProblem",
    "Trajectory",
    "DualTrajectory",
    "brachistochrone",
    "load_problem",
    "save_problem",
    "load_trajectory",
    "save_trajectory",
    "load_dual",
    "save_dual",
    # scaling
    "ScaleError",
    "ScaleSet",
    "CovectorScales",
    "identity_scales",
    "covector_scales",
    "scale_problem",
    "rescale_primal",
    "descale_primal",
    "rescale_dual",
    "descale_dual",
    "load_scale_set",
    "save_scale_set",
    "builtin_scale_set",
    "BUILTIN_SCALE_SETS",
    # solver
    "SolverError",
    "IntegratorOptions",
    "NewtonOptions",
    "NewtonResult",
    "SolveResult",
    "solve_bvp",
    "solve_bvp_full",
    "propagate_with_control",
    # conditions
    "ConditionsError",
    "MinimizeError",
    "ToleranceSet",
    "VerificationReport",
    "hamiltonian",
    "lagrangian_hamiltonian",
    "adjoint_rhs",
    "stationarity",
    "minimize_hamiltonian",
    "verify",
    # balance
    "BalanceError",
    "MagnitudeReport",
    "BalanceStep",
    "magnitude_report",
    "propose_scales",
    "balance_iterate",
    # audit
    "AuditError",
    "ScaleSequence",
    "DiscreteScalingReport",
    "SensitivityReport",
    "discrete_scaling_error",
    "additional_dynamics",
    "eigenvalues",
    "matrix_spectral_radius",
    "spectral_radius",
    "sensitivity_invariance",
]
