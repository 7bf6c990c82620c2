"""Core functionalities for hier_factors: layer-by-layer structure learning and refits."""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .config import ICBConfig
from .errors import ConvergenceError, InputError, NotPositiveDefiniteError, SolverError
from .icb import ICBOutcome, learn_children
from .objective import (
    HEYWOOD_TOL,
    RefitResult,
    SampleCovariance,
    bic,
    count_free_parameters,
    discrepancy_terms,
    implied_covariance,
    log_likelihood,
    refit_mle,
    saturated_deviance,
)
from .tree import (
    FactorTree,
    canonical_relabel,
    pattern_from_tree,
    tree_to_dict,
    validate_tree,
)

LOGGER = logging.getLogger(__name__)

__all__ = (
    "FitResult",
    "accumulate_offset",
    "fit_confirmatory",
    "fit_hierarchical",
)


def accumulate_offset(columns: Sequence[np.ndarray], variables: Sequence[int]) -> np.ndarray:
    """Sum of outer products of full-length columns restricted to 1-based ``variables``."""
    rows = np.asarray(variables, dtype=int) - 1
    offset = np.zeros((rows.size, rows.size))
    for column in columns:
        restricted = np.asarray(column, dtype=float)[rows]
        offset += np.outer(restricted, restricted)
    return offset


@dataclass(frozen=True, eq=False)
class FitResult:
    """A fitted hierarchical factor model.

    ``loadings`` columns follow the tree labels; ``unique_variances`` are the
    squared unique deviations. ``bic`` is ``-2 log L + p log N``.
    """

    tree: FactorTree
    loadings: np.ndarray
    unique_variances: np.ndarray
    discrepancy: float
    log_likelihood: float
    bic: float
    num_parameters: int
    num_obs: int
    converged: bool = True
    heywood: Tuple[int, ...] = ()
    stitched_discrepancy: Optional[float] = None
    outcomes: Tuple[ICBOutcome, ...] = ()
    config: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None

    @property
    def num_layers(self) -> int:
        return self.tree.depth

    @property
    def num_factors(self) -> int:
        return self.tree.num_factors

    @property
    def layers(self) -> List[Tuple[int, ...]]:
        return self.tree.layers

    def to_dict(self) -> Dict[str, Any]:
        """Diagnostics in a JSON-ready form; indices are 1-based."""
        return {
            "num_layers": self.num_layers,
            "num_factors": self.num_factors,
            "layers": [list(layer) for layer in self.layers],
            "discrepancy": self.discrepancy,
            "log_likelihood": self.log_likelihood,
            "bic": self.bic,
            "num_parameters": self.num_parameters,
            "num_obs": self.num_obs,
            "converged": self.converged,
            "heywood": [row + 1 for row in self.heywood],
            "stitched_discrepancy": self.stitched_discrepancy,
            "tree": tree_to_dict(self.tree),
            "factors": [outcome.to_dict() for outcome in self.outcomes],
            "seed": self.seed,
            "version": __version__,
        }


def _refit(
    tree: FactorTree,
    sample: SampleCovariance,
    config: ICBConfig,
    starts: Sequence[Optional[Tuple[np.ndarray, np.ndarray]]],
) -> RefitResult:
    pattern = pattern_from_tree(tree)
    best: Optional[RefitResult] = None
    for start in starts:
        try:
            fit = refit_mle(pattern, sample, config.tau, start=start, options=config.solver)
        except ConvergenceError as error:
            fit = error.best
        if best is None or fit.discrepancy < best.discrepancy:
            best = fit
    if not best.converged:
        LOGGER.warning(
            "Final refit did not converge within %d iterations; returning the best iterate.",
            config.solver.max_iterations,
        )
    return best


def _result(
    tree: FactorTree,
    fit: RefitResult,
    sample: SampleCovariance,
    config: ICBConfig,
    seed: Optional[int],
    outcomes: Tuple[ICBOutcome, ...] = (),
    stitched: Optional[float] = None,
) -> FitResult:
    num_parameters = count_free_parameters(pattern_from_tree(tree))
    return FitResult(
        tree=tree,
        loadings=fit.loadings,
        unique_variances=fit.unique_variances,
        discrepancy=fit.discrepancy,
        log_likelihood=log_likelihood(fit.discrepancy, sample),
        bic=bic(fit.discrepancy, num_parameters, sample.num_obs, saturated_deviance(sample)),
        num_parameters=num_parameters,
        num_obs=sample.num_obs,
        converged=fit.converged,
        heywood=fit.heywood,
        stitched_discrepancy=stitched,
        outcomes=outcomes,
        config=config.to_dict(),
        seed=seed,
    )


@dataclass
class _Factor:
    variables: Tuple[int, ...]
    layer: int
    outcome: Optional[ICBOutcome] = None


def fit_hierarchical(
    sample: SampleCovariance,
    config: ICBConfig = ICBConfig(),
    seed: int = 0,
    n_jobs: int = 1,
) -> FitResult:
    """Learn the factor tree layer by layer, then refit the learned pattern.

    Children of the factors in layer ``t`` are learned with an offset built
    from the columns of layers ``1..t-1``. Learning stops at the first layer
    that adds no children.
    """
    num_variables = sample.num_variables
    if num_variables < 3:
        raise InputError(f"Need at least three variables, got {num_variables}.")
    rng = np.random.default_rng(seed)
    factors: List[_Factor] = [_Factor(tuple(range(1, num_variables + 1)), 1)]
    current = [0]
    layer = 1
    while current:
        LOGGER.info(
            "Learning layer %d from %d factors in layer %d.", layer + 1, len(current), layer
        )
        upper_columns = [
            factor.outcome.column for factor in factors if factor.layer < layer and factor.outcome
        ]
        following = []
        for index in current:
            factor = factors[index]
            offset = accumulate_offset(upper_columns, factor.variables)
            try:
                outcome = learn_children(
                    factor.variables,
                    sample,
                    layer + 1,
                    config,
                    np.random.default_rng(rng.integers(2**32)),
                    offset if upper_columns else None,
                    n_jobs,
                )
            except SolverError as error:
                error.partial = {
                    "factors": [f.outcome.to_dict() for f in factors if f.outcome],
                    "failed_variables": list(factor.variables),
                }
                raise
            factor.outcome = outcome
            for child in outcome.child_variable_sets:
                factors.append(_Factor(child, layer + 1))
                following.append(len(factors) - 1)
        current = following
        layer += 1

    tree = canonical_relabel(
        FactorTree.from_variable_sets(num_variables, [factor.variables for factor in factors])
    )
    report = validate_tree(tree)
    if not report.is_valid:
        raise SolverError(
            f"Learned tree violates {', '.join(report.constraints())}.",
            partial={"tree": tree_to_dict(tree)},
        )
    by_variables = {factor.variables: factor for factor in factors}
    ordered = [by_variables[tree.node(label).variables] for label in tree.labels]
    outcomes = tuple(factor.outcome for factor in ordered)
    stitched = np.column_stack([outcome.column for outcome in outcomes])
    stitched_psi = np.sqrt(
        np.maximum(np.diag(sample.matrix) - np.sum(stitched**2, axis=1), HEYWOOD_TOL)
    )
    try:
        stitched_value = discrepancy_terms(
            implied_covariance(stitched, stitched_psi), sample
        )[0]
    except NotPositiveDefiniteError:
        stitched_value = None
    LOGGER.info(
        "Learned %d factors in %d layers; refitting the final pattern.",
        tree.num_factors,
        tree.depth,
    )
    fit = _refit(tree, sample, config, [(stitched, stitched_psi), None])
    return _result(tree, fit, sample, config, seed, outcomes, stitched_value)


def fit_confirmatory(
    sample: SampleCovariance,
    tree: FactorTree,
    config: ICBConfig = ICBConfig(),
    seed: Optional[int] = None,
) -> FitResult:
    """Refit a given hierarchical structure and report its fit and BIC."""
    if tree.num_variables != sample.num_variables:
        raise InputError(
            f"Tree has {tree.num_variables} variables but the covariance has "
            f"{sample.num_variables}."
        )
    report = validate_tree(tree)
    if not report.is_valid:
        details = "; ".join(f"{v.constraint} at factor {v.label}: {v.message}" for v in report)
        raise InputError(f"Tree violates the hierarchical constraints: {details}")
    fit = _refit(tree, sample, config, [None])
    return _result(tree, fit, sample, config, seed)
