"""Randomized extended Bregman-Kaczmarz solvers with block averaging and adaptive relaxation."""

from .convex import (
    ObjectiveSpec,
    bregman_distance,
    conjugate_gradient_map,
    conjugate_value,
    objective_value,
    soft_threshold,
    theta_closed_form,
)
from .experiments import (
    InstanceSpec,
    ProblemInstance,
    SuiteConfig,
    generate_gaussian,
    generate_structured,
    make_problem,
    nullspace_noise,
    plant_sparse_solution,
    pseudo_inverse_solution,
    psnr,
    run_benchmark,
)
from .linalg import (
    DenseMatrix,
    Partition,
    block_sigma_max_sq,
    compute_spectral_bounds,
    partition_uniform,
    sample_block,
)
from .solvers import (
    VARIANTS,
    ConvergenceTrace,
    Relaxation,
    SolverConfig,
    SolverState,
    relative_error,
    run,
)

__version__ = "0.1.0"
