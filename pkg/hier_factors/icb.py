"""Information-criterion search for the child factors of one factor."""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .alm import ALMSolution, MultiStartResult, multi_start_solve
from .config import ICBConfig, SolverOptions, hyperparam_schedule
from .errors import ConvergenceError, InputError, NotPositiveDefiniteError, SolverError
from .objective import (
    SampleCovariance,
    fit_pattern,
    normalize_signs,
    principal_start,
    refit_mle,
)
from .tree import BlockPartition, LoadingPattern

LOGGER = logging.getLogger(__name__)


def penalty_p(sizes: Sequence[int], dims: Sequence[int]) -> float:
    """Free parameters of the child columns, less the rotational indeterminacy of each block.

    Infinite when a block has fewer rows than columns.
    """
    if len(sizes) != len(dims):
        raise ValueError("One dimension is needed per block.")
    if any(d > size for size, d in zip(sizes, dims)):
        return math.inf
    return float(sum(size * d - d * (d - 1) // 2 for size, d in zip(sizes, dims)))


@dataclass(frozen=True, eq=False)
class CandidateFit:
    """A fitted candidate structure for the rows of one factor."""

    ic: float
    discrepancy: float
    penalty: float
    loadings: np.ndarray
    psi: np.ndarray
    dims: Tuple[int, ...] = ()


def ic_zero_children(
    sample: SampleCovariance,
    offset: Optional[np.ndarray] = None,
    tau: float = 10.0,
    options: SolverOptions = SolverOptions(),
) -> CandidateFit:
    """Fit a single column; the criterion is the bare discrepancy."""
    pattern = LoadingPattern(np.ones((sample.num_variables, 1), dtype=bool))
    try:
        fit = refit_mle(pattern, sample, tau, offset=offset, options=options)
    except ConvergenceError as error:
        LOGGER.warning("One-column fit did not converge; using its best iterate: %s", error)
        fit = error.best
    return CandidateFit(fit.discrepancy, fit.discrepancy, 0.0, fit.loadings, fit.psi)


def block_pattern(partition: BlockPartition, dims: Sequence[int]) -> LoadingPattern:
    """Leading column on every row, then ``dims[s]`` columns on block ``s`` only."""
    mask = np.zeros((partition.num_rows, 1 + sum(dims)), dtype=bool)
    mask[:, 0] = True
    column = 1
    for block, d in zip(partition.blocks, dims):
        mask[np.asarray(block)[:, None], np.arange(column, column + d)] = True
        column += d
    return LoadingPattern(mask)


def _warm_start(
    pattern: LoadingPattern,
    partition: BlockPartition,
    dims: Sequence[int],
    warm: np.ndarray,
    fallback: np.ndarray,
) -> np.ndarray:
    loadings = fallback.copy()
    loadings[:, 0] = warm[:, 0]
    column = 1
    for block, d in enumerate(dims):
        rows = np.asarray(partition.blocks[block])
        sources = partition.group_columns(block)[:d]
        loadings[rows[:, None], np.arange(column, column + sources.size)] = warm[
            rows[:, None], sources
        ]
        column += d
    return np.where(pattern.mask, loadings, 0.0)


def tilde_ic(
    partition: BlockPartition,
    dims: Sequence[int],
    sample: SampleCovariance,
    offset: Optional[np.ndarray] = None,
    tau: float = 10.0,
    options: SolverOptions = SolverOptions(),
    warm: Optional[np.ndarray] = None,
) -> CandidateFit:
    """Criterion of a fixed block structure: discrepancy plus ``penalty_p * log N``.

    The fit runs from a principal-axis start and, when ``warm`` loadings
    from the partition search are given, from those too; the better fit wins.
    """
    dims = tuple(int(d) for d in dims)
    if min(dims) < 1:
        raise InputError("Every block needs at least one column.")
    penalty = penalty_p(partition.sizes, dims)
    if math.isinf(penalty):
        raise InputError(f"Dimensions {dims} exceed block sizes {partition.sizes}.")
    pattern = block_pattern(partition, dims)
    start_loadings, start_psi = principal_start(pattern, sample, offset, tau)
    starts = [(start_loadings, start_psi)]
    if warm is not None:
        starts.append((_warm_start(pattern, partition, dims, warm, start_loadings), start_psi))
    best = None
    for start in starts:
        fit = fit_pattern(pattern, sample, start, tau, offset, options)
        if best is None or fit.discrepancy < best.discrepancy:
            best = fit
    if best.discrepancy >= 1e20:
        raise NotPositiveDefiniteError("No positive definite fit for the block structure.")
    ic = best.discrepancy + penalty * math.log(sample.num_obs)
    return CandidateFit(
        ic, best.discrepancy, penalty, normalize_signs(best.loadings), best.psi, dims
    )


@dataclass(frozen=True, eq=False)
class DimensionSearch:
    """Outcome of :func:`greedy_d_search`.

    ``steps[s]`` maps each dimension tried for block ``s`` to its criterion.
    """

    dims: Tuple[int, ...]
    fit: CandidateFit
    steps: Tuple[Dict[int, float], ...]
    partition: BlockPartition


def greedy_d_search(
    partition: BlockPartition,
    cap: int,
    sample: SampleCovariance,
    offset: Optional[np.ndarray] = None,
    tau: float = 10.0,
    options: SolverOptions = SolverOptions(),
    warm: Optional[np.ndarray] = None,
) -> DimensionSearch:
    """Choose each block's column count in turn, later blocks held at their cap.

    Ties go to the smaller dimension.
    """
    dims = [min(size, cap) for size in partition.sizes]
    cache: Dict[Tuple[int, ...], CandidateFit] = {}

    def _evaluate(candidate: Tuple[int, ...]) -> CandidateFit:
        if candidate not in cache:
            cache[candidate] = tilde_ic(partition, candidate, sample, offset, tau, options, warm)
        return cache[candidate]

    steps = []
    for slot, size in enumerate(partition.sizes):
        tried: Dict[int, float] = {}
        chosen, chosen_ic = None, math.inf
        for d in range(1, min(size, cap) + 1):
            candidate = tuple(dims[:slot] + [d] + dims[slot + 1 :])
            tried[d] = _evaluate(candidate).ic
            if tried[d] < chosen_ic:
                chosen, chosen_ic = d, tried[d]
        dims[slot] = chosen
        steps.append(tried)
    final = tuple(dims)
    return DimensionSearch(final, _evaluate(final), tuple(steps), partition)


@dataclass(frozen=True, eq=False)
class ICBOutcome:
    """Selected children of one factor.

    ``variables`` and ``child_variable_sets`` are 1-based; ``column`` is the
    factor's loading column at full length, zero outside ``variables``.
    """

    variables: Tuple[int, ...]
    child_count: int
    child_variable_sets: Tuple[Tuple[int, ...], ...]
    column: np.ndarray
    ic_table: Dict[int, float]
    selected_dims: Tuple[int, ...] = ()
    c_max: int = 0
    d: int = 0
    candidates: Dict[int, Dict[str, Any]] = field(default_factory=dict)
    failed: Dict[int, str] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready diagnostics, 1-based indices throughout."""
        return {
            "variables": list(self.variables),
            "child_count": self.child_count,
            "child_variable_sets": [list(child) for child in self.child_variable_sets],
            "selected_dims": list(self.selected_dims),
            "c_max": self.c_max,
            "d": self.d,
            "ic_table": {str(c): value for c, value in sorted(self.ic_table.items())},
            "candidates": {str(c): info for c, info in sorted(self.candidates.items())},
            "failed": {str(c): reason for c, reason in sorted(self.failed.items())},
        }


def _search_candidate(
    num_children: int,
    d: int,
    sample: SampleCovariance,
    offset: Optional[np.ndarray],
    config: ICBConfig,
    rng: np.random.Generator,
    n_jobs: int,
) -> Tuple[DimensionSearch, MultiStartResult]:
    search = multi_start_solve(
        num_children, d, sample, rng, config.alm, offset, n_jobs=n_jobs
    )
    best: ALMSolution = search.best
    if not best.satisfies_size:
        raise SolverError(
            f"No converged partition into {num_children} blocks of three or more rows."
        )
    dims = greedy_d_search(
        best.partition, d, sample, offset, config.tau, config.solver, best.loadings
    )
    return dims, search


def learn_children(
    variables: Sequence[int],
    sample: SampleCovariance,
    layer: int,
    config: ICBConfig = ICBConfig(),
    rng: Optional[np.random.Generator] = None,
    offset: Optional[np.ndarray] = None,
    n_jobs: int = 1,
) -> ICBOutcome:
    """Decide how many children the factor on ``variables`` has and how they split them.

    ``sample`` is the full covariance; ``offset`` is already restricted to
    ``variables``. ``layer`` is the index of the layer the children would join.
    """
    variables = tuple(sorted(int(v) for v in variables))
    rows = np.asarray(variables) - 1
    local = sample.restrict(rows)
    if rng is None:
        rng = np.random.default_rng()
    c_max, d = hyperparam_schedule(layer, len(variables), config)
    candidate_seeds = rng.integers(2**32, size=max(c_max - 1, 0))

    zero = ic_zero_children(local, offset, config.tau, config.solver)
    ic_table: Dict[int, float] = {0: zero.ic}
    searches: Dict[int, DimensionSearch] = {}
    candidates: Dict[int, Dict[str, Any]] = {}
    failed: Dict[int, str] = {}
    for num_children, seed in zip(range(2, c_max + 1), candidate_seeds):
        try:
            search, multistart = _search_candidate(
                num_children, d, local, offset, config, np.random.default_rng(seed), n_jobs
            )
        except (SolverError, NotPositiveDefiniteError, InputError) as error:
            failed[num_children] = str(error)
            LOGGER.warning(
                "Candidate c=%d for variables %s failed: %s", num_children, _span(variables), error
            )
            continue
        searches[num_children] = search
        ic_table[num_children] = search.fit.ic
        candidates[num_children] = {
            "ic": search.fit.ic,
            "dims": list(search.dims),
            "partition": [[variables[r] for r in block] for block in search.partition.blocks],
            "d_steps": [{str(k): v for k, v in step.items()} for step in search.steps],
            "multistart": multistart.statistics(),
        }

    selected = 0
    for num_children in sorted(ic_table):
        if ic_table[num_children] < ic_table[selected]:
            selected = num_children

    column = np.zeros(sample.num_variables)
    if selected:
        search = searches[selected]
        children = tuple(
            tuple(variables[r] for r in block) for block in search.partition.blocks
        )
        column[rows] = search.fit.loadings[:, 0]
        dims = search.dims
    else:
        children = ()
        column[rows] = zero.loadings[:, 0]
        dims = ()
    LOGGER.info(
        "Factor on variables %s: %d children selected (c_max=%d, d=%d).",
        _span(variables),
        selected,
        c_max,
        d,
    )
    return ICBOutcome(
        variables=variables,
        child_count=selected,
        child_variable_sets=children,
        column=column,
        ic_table=ic_table,
        selected_dims=tuple(dims),
        c_max=c_max,
        d=d,
        candidates=candidates,
        failed=failed,
    )


def _span(variables: Sequence[int]) -> str:
    return f"{variables[0]}..{variables[-1]} ({len(variables)})"
