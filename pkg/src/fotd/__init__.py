"""Low-rank forward sensitivity analysis for evolutionary systems.

The package evolves a rank-r decomposition U @ Y.T of the full n x d
parametric sensitivity matrix alongside the nonlinear solution, with
ground-truth verification machinery (full sensitivity solves, optimal
truncations, error decompositions, finite-difference checks) and three
demonstration systems.
"""

from .engine import (
    FotdState,
    Model,
    RankedDecomposition,
    initialize,
    modes_rhs,
    coeffs_rhs,
    rank_decomposition,
    reconstruct,
    step,
    advance,
)
from .linalg import (
    Basis,
    project_complement,
    regularized_inverse,
    reorthonormalize,
    symmetric_eig,
    truncated_svd,
    weighted_inner,
)
from .oracle import (
    ErrorReport,
    SensitivityEnsemble,
    error_report,
    fd_gradient_check,
    optimal_rank_r,
    otd_baseline_step,
    solve_full_sensitivities,
)
from .tensor import (
    FlattenMap,
    SpeciesLinearOp,
    coeff_heatmap,
    flatten_index,
    tensor_coeffs_rhs,
    tensor_modes_rhs,
    tensor_step,
    unflatten_index,
)

__version__ = "0.1.0"

__all__ = [
    "Basis",
    "ErrorReport",
    "FlattenMap",
    "FotdState",
    "Model",
    "RankedDecomposition",
    "SensitivityEnsemble",
    "SpeciesLinearOp",
    "advance",
    "coeff_heatmap",
    "coeffs_rhs",
    "error_report",
    "fd_gradient_check",
    "flatten_index",
    "initialize",
    "modes_rhs",
    "optimal_rank_r",
    "otd_baseline_step",
    "project_complement",
    "rank_decomposition",
    "reconstruct",
    "regularized_inverse",
    "reorthonormalize",
    "solve_full_sensitivities",
    "step",
    "symmetric_eig",
    "tensor_coeffs_rhs",
    "tensor_modes_rhs",
    "tensor_step",
    "truncated_svd",
    "unflatten_index",
    "weighted_inner",
    "__version__",
]
