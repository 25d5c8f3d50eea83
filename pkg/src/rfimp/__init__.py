"""Multiple imputation by chained random forests.

Continuous imputations add noise drawn from the empirical distribution of
each forest's out-of-bag prediction errors, with Normal-error and
predictive-mean-matching alternatives, plus tools to ampute complete data
and run calibration studies of the resulting pooled estimates.
"""

from .rng import DEFAULT_SEED, derive_seed, generator
from .data import (
    ColumnKind,
    ColumnSpec,
    CsvParseError,
    Dataset,
    add_product_column,
    feature_matrix,
    infer_specs,
    read_csv,
    write_csv,
)
from .forest import MAX_CAT_LEVELS, Forest, ForestParams, Task, Tree, fit
from .errordist import (
    EmptyOobPoolError,
    ErrorDistribution,
    build,
    sample_error,
    sample_errors,
    sample_normal_error,
    sample_normal_errors,
)
from .mice import (
    ImputationConfig,
    ImputationDiagnostics,
    ImputationResult,
    ImputeMethod,
)
from .mice import run as impute
from .ampute import AmputeConfig, Mechanism, ampute, missingness_probabilities
from .simstudy import (
    TRUE_BETA,
    FitResult,
    PooledCoefficient,
    PooledFit,
    ScenarioConfig,
    StudyResult,
    fit_ols,
    generate,
    pool,
    run_study,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_SEED",
    "derive_seed",
    "generator",
    "ColumnKind",
    "ColumnSpec",
    "CsvParseError",
    "Dataset",
    "add_product_column",
    "feature_matrix",
    "infer_specs",
    "read_csv",
    "write_csv",
    "MAX_CAT_LEVELS",
    "Forest",
    "ForestParams",
    "Task",
    "Tree",
    "fit",
    "EmptyOobPoolError",
    "ErrorDistribution",
    "build",
    "sample_error",
    "sample_errors",
    "sample_normal_error",
    "sample_normal_errors",
    "ImputationConfig",
    "ImputationDiagnostics",
    "ImputationResult",
    "ImputeMethod",
    "impute",
    "AmputeConfig",
    "Mechanism",
    "ampute",
    "missingness_probabilities",
    "TRUE_BETA",
    "FitResult",
    "PooledCoefficient",
    "PooledFit",
    "ScenarioConfig",
    "StudyResult",
    "fit_ols",
    "generate",
    "pool",
    "run_study",
    "__version__",
]
