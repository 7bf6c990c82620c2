"""Exceptions for hier_factors."""


class HierFactorsException(Exception):
    """Base class for exceptions in hier_factors."""


class TreeStructureError(HierFactorsException):
    """A factor tree is malformed (duplicate labels, bad references, bad indices)."""


class AmbiguousRowError(HierFactorsException):
    """A loading row cannot be assigned to exactly one block."""

    def __init__(self, row: int, message: str = None) -> None:
        self.row = row
        super().__init__(message or f"Row {row} cannot be assigned to a single block.")


class NotPositiveDefiniteError(HierFactorsException):
    """A covariance matrix is not positive definite."""


class InputError(HierFactorsException):
    """Input files or arguments are unusable."""


class PatternMismatchError(InputError):
    """A loading matrix does not follow the zero pattern of its tree."""


class ConfigurationError(HierFactorsException):
    """A configuration value is out of its valid range."""


class SolverError(HierFactorsException):
    """Base class for optimizer failures; ``partial`` holds diagnostics gathered so far."""

    def __init__(self, message: str, partial=None) -> None:
        self.partial = partial or {}
        super().__init__(message)


class ConvergenceError(SolverError):
    """The optimizer exhausted its budget; the best iterate is attached."""

    def __init__(self, message: str, best=None) -> None:
        self.best = best
        super().__init__(message)


class ALMFailure(SolverError):
    """No multi-start augmented Lagrangian run converged."""

    def __init__(self, message: str, attempts=None) -> None:
        self.attempts = attempts or []
        super().__init__(message)
