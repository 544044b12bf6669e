"""Feature-dependent Gaussian covariance prediction by convex optimization."""

__version__ = "0.1.0"

from .dataset import Dataset
from .errors import (
    CovcastError,
    DegenerateColumn,
    DimensionMismatch,
    InsufficientHistory,
    InvalidMemory,
    InvalidPermutation,
    LineSearchFailure,
    NonPositiveDiagonal,
    NotPositiveDefinite,
    ParseError,
    RecipeError,
    SchemaError,
    SingularCovariance,
    SolverFailure,
    VersionMismatch,
)
from .kernels import BACKEND
from .linalg import (
    LowerTriangular,
    SymmetricPD,
    cholesky,
    covariance_from_whitener,
    factor_of_inverse,
    solve_lower,
    solve_lower_transpose,
    whiten_vector,
)
from .objective import FitConfig, RegressionParams, objective, gradient, sample_loglik
from .solver import (
    BoxProblem,
    MinimizeResult,
    SolveStatus,
    fit_diagonal,
    fit_joint,
    fit_regression,
    minimize,
)
from .whiteners import (
    ConstantParams,
    DiagonalParams,
    EwmaParams,
    PermutationParams,
    Pipeline,
    SmaParams,
    WhitenerStage,
    WhitenResult,
    evaluate,
    evaluate_pipeline,
    fit_constant,
    fit_ewma,
    fit_permutation,
    fit_sma,
    fuse,
    pipeline_from_dict,
    pipeline_to_dict,
    predict_point,
    replicate_horizon,
    score,
    whiten_dataset,
)
from .features import Transform, fit_transform
from .dataio import (
    FeatureSpec,
    Model,
    Recipe,
    StageSpec,
    Table,
    load_model,
    load_recipe,
    read_table,
    save_model,
)
from .fit import fit_pipeline, fit_stage
