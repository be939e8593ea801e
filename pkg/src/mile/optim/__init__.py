"""Optimizers: block coordinate ascent and derivative-free latent search."""

from .search import (
    CubeSearchConfig,
    GaConfig,
    SearchError,
    evaluate_population,
    hybrid_ga,
    profile_fitness,
    random_cube_search,
    stepwise_categorical_opt,
)
from .smooth import (
    BcaConfig,
    ConvergenceError,
    NoSignChangeError,
    RootFindingError,
    RootSolveConfig,
    SingularJacobianError,
    block_coordinate_ascent,
    damped_newton,
    solve_scalar_root,
    solve_scalar_roots,
)
