"""hier_factors."""
__version__ = "0.1.0"

# pylint: disable=wrong-import-position
from .conditions import ConditionReport, check_conditions
from .config import (
    ALMConfig,
    Configuration,
    ICBConfig,
    RunConfig,
    SolverOptions,
    hyperparam_schedule,
)
from .core import FitResult, fit_confirmatory, fit_hierarchical
from .errors import (
    ALMFailure,
    ConvergenceError,
    HierFactorsException,
    InputError,
    NotPositiveDefiniteError,
    PatternMismatchError,
    SolverError,
    TreeStructureError,
)
from .objective import SampleCovariance, bic, discrepancy, refit_mle
from .simulation import TruthSpec, generate_truth, run_benchmark, score_recovery
from .tree import FactorTree, LoadingPattern, validate_tree

__all__ = (
    "__version__",
    "ALMConfig",
    "ALMFailure",
    "ConditionReport",
    "Configuration",
    "ConvergenceError",
    "FactorTree",
    "FitResult",
    "HierFactorsException",
    "ICBConfig",
    "InputError",
    "LoadingPattern",
    "NotPositiveDefiniteError",
    "PatternMismatchError",
    "RunConfig",
    "SampleCovariance",
    "SolverError",
    "SolverOptions",
    "TreeStructureError",
    "TruthSpec",
    "bic",
    "check_conditions",
    "discrepancy",
    "fit_confirmatory",
    "fit_hierarchical",
    "generate_truth",
    "hyperparam_schedule",
    "refit_mle",
    "run_benchmark",
    "score_recovery",
    "validate_tree",
)
