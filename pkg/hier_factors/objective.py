"""Maximum-likelihood discrepancy, its gradient, the pattern-constrained refit and BIC."""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize

from .config import SolverOptions
from .errors import ConvergenceError, InputError, NotPositiveDefiniteError
from .tree import LoadingPattern

LOGGER = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
HEYWOOD_TOL = 1e-8
INFEASIBLE_VALUE = 1e20
MIN_START_EIGENVALUE = 0.01
DIVISORS = ("n", "n-1")


def _cholesky(matrix: np.ndarray) -> Tuple[np.ndarray, bool]:
    try:
        return linalg.cho_factor(matrix, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as error:
        raise NotPositiveDefiniteError("Matrix is not positive definite.") from error


def logdet(matrix: np.ndarray) -> float:
    """Log-determinant of a positive definite matrix."""
    factor, _ = _cholesky(np.asarray(matrix, dtype=float))
    return 2.0 * float(np.sum(np.log(np.diag(factor))))


@dataclass(frozen=True, eq=False)
class SampleCovariance:
    """A positive definite sample covariance matrix and its sample size."""

    matrix: np.ndarray
    num_obs: int
    logdet: float = field(init=False)

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 1:
            raise InputError(f"Covariance must be a square matrix, got shape {matrix.shape}.")
        if not np.all(np.isfinite(matrix)):
            raise InputError("Covariance contains non-finite entries.")
        scale = max(1.0, float(np.max(np.abs(matrix))))
        if np.max(np.abs(matrix - matrix.T)) > SYMMETRY_TOL * scale:
            raise InputError("Covariance matrix is not symmetric.")
        if int(self.num_obs) != self.num_obs or self.num_obs < 1:
            raise InputError(f"Sample size must be a positive integer, got {self.num_obs}.")
        matrix = (matrix + matrix.T) / 2.0
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "num_obs", int(self.num_obs))
        object.__setattr__(self, "logdet", logdet(matrix))

    @classmethod
    def from_data(
        cls,
        data: np.ndarray,
        center: bool = True,
        divisor: str = "n",
        ridge: float = 0.0,
    ) -> "SampleCovariance":
        """Covariance of an ``N x J`` data matrix, optionally with ``ridge`` on the diagonal."""
        data = np.asarray(data, dtype=float)
        if data.ndim != 2:
            raise InputError("Data must be a two-dimensional array.")
        num_obs, num_variables = data.shape
        if num_obs <= num_variables:
            raise InputError(
                f"Need more observations than variables, got N={num_obs}, J={num_variables}."
            )
        if divisor not in DIVISORS:
            raise InputError(f"Unknown divisor {divisor!r}; use one of {DIVISORS}.")
        if center:
            data = data - data.mean(axis=0)
        denominator = num_obs if divisor == "n" else num_obs - 1
        return cls.from_matrix(data.T @ data / denominator, num_obs, ridge)

    @classmethod
    def from_matrix(
        cls, matrix: np.ndarray, num_obs: int, ridge: float = 0.0
    ) -> "SampleCovariance":
        """Wrap a covariance matrix, optionally adding ``ridge`` to its diagonal."""
        matrix = np.array(matrix, dtype=float)
        if ridge:
            matrix = matrix + ridge * np.eye(matrix.shape[0])
        return cls(matrix, num_obs)

    def with_ridge(self, ridge: float) -> "SampleCovariance":
        """A copy with ``ridge`` added to the diagonal."""
        return SampleCovariance.from_matrix(self.matrix, self.num_obs, ridge)

    def restrict(self, rows: Sequence[int]) -> "SampleCovariance":
        """Sub-covariance over 0-based ``rows``."""
        rows = np.asarray(rows, dtype=int)
        return SampleCovariance(self.matrix[np.ix_(rows, rows)], self.num_obs)

    @property
    def num_variables(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Loadings, unique standard deviations and a fixed covariance offset."""

    loadings: np.ndarray
    psi: np.ndarray
    offset: Optional[np.ndarray] = None

    def covariance(self) -> np.ndarray:
        return implied_covariance(self.loadings, self.psi, self.offset)


def implied_covariance(
    loadings: np.ndarray, psi: np.ndarray, offset: Optional[np.ndarray] = None
) -> np.ndarray:
    """``offset + loadings @ loadings.T + diag(psi**2)``."""
    loadings = np.asarray(loadings, dtype=float)
    sigma = loadings @ loadings.T + np.diag(np.asarray(psi, dtype=float) ** 2)
    if offset is not None:
        sigma = sigma + offset
    return sigma


def discrepancy_terms(sigma: np.ndarray, sample: SampleCovariance) -> Tuple[float, np.ndarray]:
    """Discrepancy of ``sigma`` and its gradient with respect to ``sigma``.

    Raises :class:`NotPositiveDefiniteError` when ``sigma`` is not positive definite.
    """
    factor = _cholesky(sigma)
    sigma_logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    solved = linalg.cho_solve(factor, sample.matrix)
    value = sample.num_obs * (
        sigma_logdet + float(np.trace(solved)) - sample.logdet - sample.num_variables
    )
    inverse = linalg.cho_solve(factor, np.eye(sample.num_variables))
    sandwich = linalg.cho_solve(factor, solved.T)
    grad = sample.num_obs * (inverse - sandwich)
    return value, (grad + grad.T) / 2.0


def discrepancy(sigma_model: np.ndarray, sample_matrix: np.ndarray, num_obs: int) -> float:
    """``N (log det Sigma + tr(S Sigma^-1) - log det S - J)``; zero iff ``Sigma == S``."""
    sample = SampleCovariance(sample_matrix, num_obs)
    sigma_model = np.asarray(sigma_model, dtype=float)
    if sigma_model.shape != sample.matrix.shape:
        raise InputError("Model and sample covariances differ in shape.")
    factor = _cholesky(sigma_model)
    sigma_logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    trace = float(np.trace(linalg.cho_solve(factor, sample.matrix)))
    value = num_obs * (sigma_logdet + trace - sample.logdet - sample.num_variables)
    return max(value, 0.0)


def discrepancy_gradient(
    params: ModelParams, pattern: LoadingPattern, sample: SampleCovariance
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient over the free loadings (row-major mask order) and over ``psi``."""
    _, grad_sigma = discrepancy_terms(params.covariance(), sample)
    loadings = np.asarray(params.loadings, dtype=float)
    grad_loadings = 2.0 * grad_sigma @ loadings
    grad_psi = 2.0 * np.diag(grad_sigma) * np.asarray(params.psi, dtype=float)
    return grad_loadings[pattern.mask], grad_psi


@dataclass(frozen=True)
class BoxResult:
    """Outcome of :func:`minimize_box`."""

    x: np.ndarray
    fun: float
    converged: bool
    iterations: int
    message: str = ""


def minimize_box(
    fun: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    x0: np.ndarray,
    bounds: Sequence[Tuple[Optional[float], Optional[float]]],
    options: SolverOptions = SolverOptions(),
    gtol: Optional[float] = None,
) -> BoxResult:
    """Box-constrained L-BFGS-B on a value-and-gradient function.

    Points where ``fun`` raises :class:`NotPositiveDefiniteError` evaluate to a
    large finite value so the line search backtracks. The returned point is
    never worse than ``x0``. A run the line search stops early counts as
    converged only when the projected gradient there is small.
    """

    def _guarded(x: np.ndarray) -> Tuple[float, np.ndarray]:
        try:
            value, grad = fun(x)
        except NotPositiveDefiniteError:
            return INFEASIBLE_VALUE, np.zeros_like(x)
        if not math.isfinite(value):
            return INFEASIBLE_VALUE, np.zeros_like(x)
        return value, grad

    x0 = np.asarray(x0, dtype=float)
    gtol = options.gtol if gtol is None else gtol
    start_value, _ = _guarded(x0)

    def _stationary(x: np.ndarray, value: float) -> bool:
        if value >= INFEASIBLE_VALUE:
            return False
        _, grad = _guarded(x)
        slack = math.sqrt(gtol) * max(1.0, abs(value))
        return projected_gradient_norm(x, grad, bounds) <= slack

    result = optimize.minimize(
        _guarded,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"ftol": options.ftol, "gtol": gtol, "maxiter": options.max_iterations},
    )
    if result.fun > start_value:
        return BoxResult(
            x0.copy(), start_value, _stationary(x0, start_value), int(result.nit), "start kept"
        )
    x = np.asarray(result.x)
    converged = bool(result.success) or (
        result.status == 2 and _stationary(x, float(result.fun))
    )
    return BoxResult(x, float(result.fun), converged, int(result.nit), str(result.message))


def projected_gradient_norm(
    x: np.ndarray,
    grad: np.ndarray,
    bounds: Sequence[Tuple[Optional[float], Optional[float]]],
) -> float:
    """Infinity norm of the gradient step projected back onto the box."""
    lower = np.array([-np.inf if lo is None else lo for lo, _ in bounds], dtype=float)
    upper = np.array([np.inf if hi is None else hi for _, hi in bounds], dtype=float)
    return float(np.max(np.abs(np.clip(x - grad, lower, upper) - x), initial=0.0))


def normalize_signs(loadings: np.ndarray) -> np.ndarray:
    """Flip columns so each column's first nonzero entry is nonnegative."""
    loadings = np.array(loadings, dtype=float)
    for column in range(loadings.shape[1]):
        nonzero = np.flatnonzero(loadings[:, column])
        if nonzero.size and loadings[nonzero[0], column] < 0:
            loadings[:, column] = -loadings[:, column]
    return loadings + 0.0


def start_psi(sample: SampleCovariance, offset: Optional[np.ndarray] = None) -> np.ndarray:
    """Half of each residual variance, floored at 0.05, as standard deviations."""
    diagonal = np.diag(sample.matrix)
    if offset is not None:
        diagonal = diagonal - np.diag(offset)
    return np.sqrt(np.maximum(diagonal / 2.0, 0.05))


def principal_start(
    pattern: LoadingPattern,
    sample: SampleCovariance,
    offset: Optional[np.ndarray] = None,
    tau: float = 10.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic start: columns are successive leading eigenvectors of the deflated residual."""
    psi = start_psi(sample, offset)
    residual = sample.matrix - np.diag(psi**2)
    if offset is not None:
        residual = residual - offset
    loadings = np.zeros(pattern.mask.shape)
    for column in range(pattern.num_factors):
        rows = pattern.column_support(column)
        if rows.size == 0:
            continue
        block = residual[np.ix_(rows, rows)]
        values, vectors = linalg.eigh(block)
        vector = vectors[:, -1]
        if vector.sum() < 0:
            vector = -vector
        loadings[rows, column] = np.clip(
            vector * math.sqrt(max(values[-1], MIN_START_EIGENVALUE)), -tau, tau
        )
        residual = residual - np.outer(loadings[:, column], loadings[:, column])
    return loadings, psi


@dataclass(frozen=True, eq=False)
class RefitResult:
    """A pattern-constrained maximum-likelihood fit.

    ``unique_variances`` is ``psi**2``; ``heywood`` lists 0-based rows whose
    unique variance sits on the zero boundary.
    """

    loadings: np.ndarray
    psi: np.ndarray
    discrepancy: float
    converged: bool
    iterations: int
    heywood: Tuple[int, ...] = ()

    @property
    def unique_variances(self) -> np.ndarray:
        return self.psi**2


def _pattern_objective(
    mask: np.ndarray, sample: SampleCovariance, offset: Optional[np.ndarray]
) -> Callable[[np.ndarray], Tuple[float, np.ndarray]]:
    num_free = int(mask.sum())

    def _objective(x: np.ndarray) -> Tuple[float, np.ndarray]:
        loadings = np.zeros(mask.shape)
        loadings[mask] = x[:num_free]
        psi = x[num_free:]
        value, grad_sigma = discrepancy_terms(implied_covariance(loadings, psi, offset), sample)
        grad_loadings = 2.0 * grad_sigma @ loadings
        grad_psi = 2.0 * np.diag(grad_sigma) * psi
        return value, np.concatenate([grad_loadings[mask], grad_psi])

    return _objective


def fit_pattern(
    pattern: LoadingPattern,
    sample: SampleCovariance,
    start: Tuple[np.ndarray, np.ndarray],
    tau: float = 10.0,
    offset: Optional[np.ndarray] = None,
    options: SolverOptions = SolverOptions(),
) -> RefitResult:
    """One box-constrained fit of ``pattern`` from ``start``, without sign normalization."""
    mask = pattern.mask
    start_loadings = np.clip(np.asarray(start[0], dtype=float), -tau, tau)
    x0 = np.concatenate([start_loadings[mask], np.abs(np.asarray(start[1], dtype=float))])
    bounds = [(-tau, tau)] * pattern.num_free + [(0.0, None)] * pattern.num_variables
    outcome = minimize_box(_pattern_objective(mask, sample, offset), x0, bounds, options)
    loadings = np.zeros(mask.shape)
    loadings[mask] = outcome.x[: pattern.num_free]
    psi = outcome.x[pattern.num_free :]
    heywood = tuple(int(row) for row in np.flatnonzero(psi**2 < HEYWOOD_TOL))
    return RefitResult(
        loadings, psi, outcome.fun, outcome.converged, outcome.iterations, heywood
    )


def refit_mle(
    pattern: LoadingPattern,
    sample: SampleCovariance,
    tau: float = 10.0,
    start: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    offset: Optional[np.ndarray] = None,
    options: SolverOptions = SolverOptions(),
) -> RefitResult:
    """Minimize the discrepancy over loadings that respect ``pattern``.

    Without a ``start`` the fit begins from :func:`principal_start`. Raises
    :class:`ConvergenceError` carrying the best fit when the iteration budget
    runs out.
    """
    if pattern.num_variables != sample.num_variables:
        raise InputError("Pattern and covariance differ in the number of variables.")
    if pattern.num_factors == 0 and offset is None:
        psi = np.sqrt(np.diag(sample.matrix))
        value = discrepancy_terms(np.diag(psi**2), sample)[0]
        return RefitResult(np.zeros(pattern.mask.shape), psi, value, True, 0)
    if start is None:
        start = principal_start(pattern, sample, offset, tau)
    fit = fit_pattern(pattern, sample, start, tau, offset, options)
    fit = RefitResult(
        normalize_signs(fit.loadings),
        fit.psi,
        fit.discrepancy,
        fit.converged,
        fit.iterations,
        fit.heywood,
    )
    if fit.discrepancy >= INFEASIBLE_VALUE:
        raise NotPositiveDefiniteError("No positive definite fit was found from the start.")
    if fit.heywood:
        LOGGER.warning("Heywood case: zero unique variance at rows %s.", list(fit.heywood))
    if not fit.converged:
        raise ConvergenceError(
            f"Refit did not converge within {options.max_iterations} iterations.", best=fit
        )
    return fit


def count_free_parameters(pattern: LoadingPattern) -> int:
    """Free loadings plus one unique variance per variable."""
    return pattern.num_free + pattern.num_variables


def saturated_deviance(sample: SampleCovariance) -> float:
    """``-2 log L`` of the saturated model, which the discrepancy is measured against."""
    return sample.num_obs * (
        sample.logdet + sample.num_variables * (1.0 + math.log(2.0 * math.pi))
    )


def log_likelihood(discrepancy_value: float, sample: SampleCovariance) -> float:
    """Gaussian log-likelihood of a fit with the given discrepancy."""
    return -(discrepancy_value + saturated_deviance(sample)) / 2.0


def bic(
    fit_discrepancy: float,
    num_free_params: int,
    num_obs: int,
    deviance_offset: float = 0.0,
) -> float:
    """``fit_discrepancy + deviance_offset + num_free_params * log(N)``; lower is better."""
    if num_obs < 2:
        raise InputError(f"BIC needs a sample size of at least 2, got {num_obs}.")
    return fit_discrepancy + deviance_offset + num_free_params * math.log(num_obs)
