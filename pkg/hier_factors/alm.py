"""Augmented Lagrangian search for a block partition of a factor's variables.

The loading matrix has one leading column shared by every row and
``num_children`` groups of ``group_size`` columns. The bilinear constraints
ask every row to load on at most one group; a row's products across
different groups are driven to zero by multipliers and an escalating
quadratic penalty.
"""
import logging
import math
import multiprocessing
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .config import ALMConfig
from .errors import ALMFailure, AmbiguousRowError, InputError, NotPositiveDefiniteError
from .objective import (
    SampleCovariance,
    discrepancy_terms,
    implied_covariance,
    minimize_box,
    start_psi,
)
from .tree import MIN_FACTOR_SIZE, BlockPartition, group_maxima, partition_from_loading

LOGGER = logging.getLogger(__name__)

MAX_PENALTY = 1e12


def cross_group_pairs(num_children: int, group_size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Column index pairs ``(j, j')`` with ``j`` and ``j'`` in different groups, each pair once."""
    first, second = [], []
    for group in range(num_children):
        for other in range(group + 1, num_children):
            for j in range(group_size):
                for k in range(group_size):
                    first.append(1 + group * group_size + j)
                    second.append(1 + other * group_size + k)
    return np.asarray(first, dtype=int), np.asarray(second, dtype=int)


def h_second_largest(values: Sequence[float]) -> float:
    """Second largest entry, counting ties: ``(5, 5)`` gives 5."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2:
        raise ValueError("h needs at least two values.")
    return float(np.sort(values)[-2])


def max_row_h(loadings: np.ndarray, num_children: int) -> float:
    """Largest over rows of the second-largest group maximum."""
    maxima = group_maxima(loadings, num_children)
    return float(np.sort(maxima, axis=1)[:, -2].max())


def augmented_objective(
    loadings: np.ndarray,
    psi: np.ndarray,
    multipliers: np.ndarray,
    penalty: float,
    sample: SampleCovariance,
    num_children: int,
    offset: Optional[np.ndarray] = None,
) -> float:
    """Discrepancy plus multiplier and quadratic penalty terms over cross-group products.

    ``multipliers`` is ``rows x pairs`` in the order of :func:`cross_group_pairs`.
    Returns ``inf`` when the implied covariance is not positive definite.
    """
    loadings = np.asarray(loadings, dtype=float)
    group_size = (loadings.shape[1] - 1) // num_children
    first, second = cross_group_pairs(num_children, group_size)
    try:
        value, _ = discrepancy_terms(implied_covariance(loadings, psi, offset), sample)
    except NotPositiveDefiniteError:
        return math.inf
    products = loadings[:, first] * loadings[:, second]
    return value + float(np.sum(multipliers * products)) + 0.5 * penalty * float(
        np.sum(products**2)
    )


class _AugmentedFunction:
    """Value and gradient of the augmented objective over packed ``(loadings, psi)``."""

    def __init__(
        self,
        sample: SampleCovariance,
        offset: Optional[np.ndarray],
        width: int,
        first: np.ndarray,
        second: np.ndarray,
    ) -> None:
        self.sample = sample
        self.offset = offset
        self.rows = sample.num_variables
        self.width = width
        self.first = first
        self.second = second
        identity = np.eye(width)
        self.incidence_first = identity[first]
        self.incidence_second = identity[second]
        self.multipliers = np.zeros((self.rows, first.size))
        self.penalty = 1.0

    def unpack(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        size = self.rows * self.width
        return x[:size].reshape(self.rows, self.width), x[size:]

    def products(self, loadings: np.ndarray) -> np.ndarray:
        return loadings[:, self.first] * loadings[:, self.second]

    def __call__(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        loadings, psi = self.unpack(x)
        value, grad_sigma = discrepancy_terms(
            implied_covariance(loadings, psi, self.offset), self.sample
        )
        products = self.products(loadings)
        value += float(np.sum(self.multipliers * products))
        value += 0.5 * self.penalty * float(np.sum(products**2))
        coefficient = self.multipliers + self.penalty * products
        grad_loadings = 2.0 * grad_sigma @ loadings
        grad_loadings += (coefficient * loadings[:, self.second]) @ self.incidence_first
        grad_loadings += (coefficient * loadings[:, self.first]) @ self.incidence_second
        grad_psi = 2.0 * np.diag(grad_sigma) * psi
        return value, np.concatenate([grad_loadings.ravel(), grad_psi])


@dataclass(frozen=True, eq=False)
class ALMSolution:
    """Result of one augmented Lagrangian run.

    ``objective`` is the plain discrepancy at the returned point; ``penalty``
    is the final penalty coefficient so the run can be warm restarted.
    """

    loadings: np.ndarray
    psi: np.ndarray
    partition: BlockPartition
    objective: float
    converged: bool
    satisfies_size: bool
    iterations: int
    penalty: float
    max_h: float
    constraint_norm: float
    message: str = ""


def satisfies_size_constraint(partition: BlockPartition, num_children: int) -> bool:
    """Every requested block is present and holds at least three rows."""
    return partition.num_blocks == num_children and min(partition.sizes) >= MIN_FACTOR_SIZE


def extract_partition(loadings: np.ndarray, num_children: int, tol: float) -> BlockPartition:
    """Partition rows by group; ambiguous rows go to their largest group."""
    try:
        return partition_from_loading(loadings, num_children, tol)
    except AmbiguousRowError as error:
        maxima = group_maxima(loadings, num_children)
        active = (maxima >= tol).sum(axis=1)
        ambiguous = np.flatnonzero(active != 1)
        LOGGER.warning(
            "Rows %s are not block-pure (first: %d); assigning by largest group loading.",
            (ambiguous + 1).tolist(),
            error.row + 1,
        )
        width = (loadings.shape[1] - 1) // num_children
        return BlockPartition.from_assignment(maxima.argmax(axis=1), num_children, width)


def random_start(
    num_children: int,
    group_size: int,
    sample: SampleCovariance,
    rng: np.random.Generator,
    tau: float = 10.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform(-1, 1) loadings and half-variance unique deviations."""
    width = 1 + num_children * group_size
    loadings = rng.uniform(-1.0, 1.0, size=(sample.num_variables, width))
    return np.clip(loadings, -tau, tau), start_psi(sample)


def alm_run(
    num_children: int,
    group_size: int,
    sample: SampleCovariance,
    start: Tuple[np.ndarray, np.ndarray],
    config: ALMConfig = ALMConfig(),
    offset: Optional[np.ndarray] = None,
    penalty: Optional[float] = None,
) -> ALMSolution:
    """Run the augmented Lagrangian iterations from ``start``.

    Multipliers start at zero; ``penalty`` defaults to the configured initial
    penalty. On budget exhaustion the returned solution has ``converged=False``
    and can be passed back as a warm start.
    """
    rows = sample.num_variables
    if num_children < 2 or group_size < 1:
        raise InputError("Need at least two child groups of at least one column.")
    if MIN_FACTOR_SIZE * num_children > rows:
        raise InputError(
            f"{rows} variables cannot host {num_children} blocks of {MIN_FACTOR_SIZE} or more."
        )
    width = 1 + num_children * group_size
    loadings, psi = (np.asarray(part, dtype=float) for part in start)
    if loadings.shape != (rows, width) or psi.shape != (rows,):
        raise InputError(
            f"Start shapes {loadings.shape}, {psi.shape} do not match ({rows}, {width})."
        )

    first, second = cross_group_pairs(num_children, group_size)
    function = _AugmentedFunction(sample, offset, width, first, second)
    function.penalty = config.initial_penalty if penalty is None else penalty
    tau = config.tau
    x = np.concatenate([np.clip(loadings, -tau, tau).ravel(), np.abs(psi)])
    bounds = [(-tau, tau)] * (rows * width) + [(0.0, None)] * rows
    previous_norm = float(linalg.norm(function.products(function.unpack(x)[0])))
    scale = math.sqrt(rows * (2 + group_size))

    converged = False
    message = ""
    change = max_h = math.inf
    iteration = 0
    for iteration in range(1, config.max_iterations + 1):
        early = iteration <= config.early_iterations
        gtol = config.inner_gtol_early if early else config.inner_gtol
        try:
            outcome = minimize_box(function, x, bounds, config.solver, gtol=gtol)
        except (ValueError, FloatingPointError) as error:
            message = f"inner solver failed: {error}"
            LOGGER.debug("ALM inner solve failed at iteration %d: %s", iteration, error)
            break
        new_loadings, _ = function.unpack(outcome.x)
        products = function.products(new_loadings)
        constraint_norm = float(linalg.norm(products))
        function.multipliers = function.multipliers + function.penalty * products
        if constraint_norm > config.c_theta * previous_norm:
            function.penalty = min(function.penalty * config.c_sigma, MAX_PENALTY)
        change = float(linalg.norm(outcome.x - x)) / scale
        max_h = max_row_h(new_loadings, num_children)
        LOGGER.debug(
            "ALM iteration %d: penalty=%.3g constraint_norm=%.3g change=%.3g max_h=%.3g",
            iteration,
            function.penalty,
            constraint_norm,
            change,
            max_h,
        )
        x = outcome.x
        previous_norm = constraint_norm
        if change < config.delta1 and max_h < config.delta2:
            converged = True
            break

    loadings, psi = function.unpack(x)
    loadings = loadings.copy()
    try:
        objective, _ = discrepancy_terms(implied_covariance(loadings, psi, offset), sample)
    except NotPositiveDefiniteError:
        objective, converged = math.inf, False
    partition = extract_partition(loadings, num_children, config.delta2)
    return ALMSolution(
        loadings=loadings,
        psi=psi.copy(),
        partition=partition,
        objective=float(objective),
        converged=converged,
        satisfies_size=converged and satisfies_size_constraint(partition, num_children),
        iterations=iteration,
        penalty=function.penalty,
        max_h=max_row_h(loadings, num_children),
        constraint_norm=float(linalg.norm(function.products(loadings))),
        message=message,
    )


@dataclass(frozen=True)
class AttemptRecord:
    """One line of the multi-start attempt log."""

    round: int
    seed: int
    warm: bool
    converged: bool
    satisfies_size: bool
    objective: float
    iterations: int
    max_h: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class MultiStartResult:
    """Best solution of a multi-start search and its attempt log.

    ``degraded`` is set when fewer than the configured quorum of converged
    runs satisfied the size constraint.
    """

    best: ALMSolution
    attempts: Tuple[AttemptRecord, ...]
    rounds: int
    degraded: bool
    num_converged: int
    num_valid: int

    def statistics(self) -> Dict[str, Any]:
        """Counts for diagnostics files."""
        return {
            "attempts": len(self.attempts),
            "rounds": self.rounds,
            "converged": self.num_converged,
            "valid": self.num_valid,
            "degraded": self.degraded,
        }


@dataclass(frozen=True, eq=False)
class _Attempt:
    num_children: int
    group_size: int
    sample: SampleCovariance
    offset: Optional[np.ndarray]
    config: ALMConfig
    seed: int
    start: Optional[Tuple[np.ndarray, np.ndarray]] = None
    penalty: Optional[float] = None


def _run_attempt(attempt: _Attempt) -> ALMSolution:
    start = attempt.start
    if start is None:
        rng = np.random.default_rng(attempt.seed)
        start = random_start(
            attempt.num_children, attempt.group_size, attempt.sample, rng, attempt.config.tau
        )
    return alm_run(
        attempt.num_children,
        attempt.group_size,
        attempt.sample,
        start,
        attempt.config,
        attempt.offset,
        attempt.penalty,
    )


def _run_all(attempts: List[_Attempt], n_jobs: int) -> List[ALMSolution]:
    if n_jobs > 1 and len(attempts) > 1:
        with multiprocessing.Pool(min(n_jobs, len(attempts))) as pool:
            return pool.map(_run_attempt, attempts)
    return [_run_attempt(attempt) for attempt in attempts]


def multi_start_solve(
    num_children: int,
    group_size: int,
    sample: SampleCovariance,
    rng: np.random.Generator,
    config: ALMConfig = ALMConfig(),
    offset: Optional[np.ndarray] = None,
    initial_starts: Sequence[Tuple[np.ndarray, np.ndarray]] = (),
    n_jobs: int = 1,
) -> MultiStartResult:
    """Run batches of augmented Lagrangian attempts and keep the best valid one.

    Each round runs ``num_starts`` attempts: warm restarts of the previous
    round's unconverged attempts (multipliers reset, penalty kept) and fresh
    random starts for the rest. Rounds stop once ``min_valid_solutions`` converged
    attempts satisfy the size constraint or ``max_restarts`` restarts were made.
    Seeds are drawn from ``rng`` before dispatch, so results do not depend on
    ``n_jobs``.
    """
    if MIN_FACTOR_SIZE * num_children > sample.num_variables:
        raise InputError(
            f"{sample.num_variables} variables cannot host {num_children} blocks "
            f"of {MIN_FACTOR_SIZE} or more."
        )
    records: List[AttemptRecord] = []
    solutions: List[ALMSolution] = []
    pending: List[Tuple[int, ALMSolution]] = []
    explicit = list(initial_starts)
    rounds = 0
    num_valid = 0
    for round_index in range(config.max_restarts + 1):
        rounds = round_index + 1
        seeds = rng.integers(2**32, size=config.num_starts)
        attempts: List[_Attempt] = []
        warm_flags: List[bool] = []
        for seed, previous in pending[: config.num_starts]:
            attempts.append(
                _Attempt(
                    num_children,
                    group_size,
                    sample,
                    offset,
                    config,
                    seed,
                    (previous.loadings, previous.psi),
                    previous.penalty,
                )
            )
            warm_flags.append(True)
        position = 0
        while len(attempts) < config.num_starts:
            seed = int(seeds[position])
            position += 1
            start = explicit.pop(0) if explicit else None
            attempts.append(
                _Attempt(num_children, group_size, sample, offset, config, seed, start)
            )
            warm_flags.append(False)

        results = _run_all(attempts, n_jobs)
        pending = []
        for attempt, warm, solution in zip(attempts, warm_flags, results):
            records.append(
                AttemptRecord(
                    round=round_index,
                    seed=int(attempt.seed),
                    warm=warm,
                    converged=solution.converged,
                    satisfies_size=solution.satisfies_size,
                    objective=solution.objective,
                    iterations=solution.iterations,
                    max_h=solution.max_h,
                )
            )
            if solution.converged:
                solutions.append(solution)
            else:
                pending.append((int(attempt.seed), solution))
        num_valid = sum(solution.satisfies_size for solution in solutions)
        LOGGER.debug(
            "Multi-start round %d for c=%d, d=%d: %d converged, %d satisfy the size constraint.",
            round_index,
            num_children,
            group_size,
            len(solutions),
            num_valid,
        )
        if num_valid >= config.min_valid_solutions:
            break

    if not solutions:
        raise ALMFailure(
            f"No augmented Lagrangian run converged for c={num_children}, d={group_size}.",
            attempts=records,
        )
    valid = [solution for solution in solutions if solution.satisfies_size] or solutions
    best = min(valid, key=lambda solution: solution.objective)
    degraded = num_valid < config.min_valid_solutions
    if degraded:
        LOGGER.warning(
            "Only %d of %d required runs satisfied the size constraint"
            " for c=%d, d=%d after %d rounds.",
            num_valid,
            config.min_valid_solutions,
            num_children,
            group_size,
            rounds,
        )
    return MultiStartResult(
        best=best,
        attempts=tuple(records),
        rounds=rounds,
        degraded=degraded,
        num_converged=len(solutions),
        num_valid=num_valid,
    )
