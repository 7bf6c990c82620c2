"""Ground-truth generation, sampling and structure-recovery scoring."""
import logging
import math
import multiprocessing
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from .config import ICBConfig
from .core import FitResult, fit_hierarchical
from .errors import HierFactorsException, InputError
from .objective import SampleCovariance
from .tree import FactorTree, four_layer_tree, pattern_from_tree, three_layer_tree, validate_tree

LOGGER = logging.getLogger(__name__)

SHAPES = ("four-layer", "three-layer")
TRUTH_MODES = ("fixed", "per-replication")


@dataclass(frozen=True)
class TruthSpec:
    """How to draw a true model on ``tree``.

    Loadings have magnitude ``Uniform(low, high)``; below the general factor
    each sign is negative with probability ``flip_probability``. Unique
    variances all equal ``unique_variance``.
    """

    tree: FactorTree
    low: float = 0.5
    high: float = 2.0
    flip_probability: float = 0.5
    unique_variance: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0 < self.low <= self.high:
            raise InputError("Loading magnitudes need 0 < low <= high.")
        if self.unique_variance <= 0:
            raise InputError("Unique variance must be positive.")
        report = validate_tree(self.tree)
        if not report.is_valid:
            raise InputError(f"Truth tree violates {', '.join(report.constraints())}.")


@dataclass(frozen=True, eq=False)
class Truth:
    """True loadings, unique variances and the implied covariance."""

    loadings: np.ndarray
    unique_variances: np.ndarray
    covariance: np.ndarray


def generate_truth(spec: TruthSpec, rng: Optional[np.random.Generator] = None) -> Truth:
    """Draw loadings on the tree's pattern; the general factor's column stays positive.

    Without ``rng`` the draw is seeded from ``spec.seed``.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    mask = pattern_from_tree(spec.tree).mask
    magnitude = rng.uniform(spec.low, spec.high, size=mask.shape)
    flips = rng.binomial(1, spec.flip_probability, size=mask.shape)
    signs = 1 - 2 * flips
    signs[:, 0] = 1
    loadings = np.where(mask, magnitude * signs, 0.0)
    unique = np.full(mask.shape[0], spec.unique_variance)
    return Truth(loadings, unique, loadings @ loadings.T + np.diag(unique))


def sample_covariance(
    sigma: np.ndarray,
    num_obs: int,
    rng: np.random.Generator,
    divisor: str = "n",
    center: bool = False,
    oracle: bool = False,
) -> SampleCovariance:
    """Covariance of ``num_obs`` mean-zero Gaussian draws from ``sigma``.

    In ``oracle`` mode the population matrix itself is returned.
    """
    sigma = np.asarray(sigma, dtype=float)
    num_variables = sigma.shape[0]
    if num_obs <= num_variables:
        raise InputError(f"Need N > J to sample a covariance, got N={num_obs}, J={num_variables}.")
    if oracle:
        return SampleCovariance(sigma, num_obs)
    factor = linalg.cholesky(sigma, lower=True)
    draws = rng.standard_normal((num_obs, num_variables)) @ factor.T
    return SampleCovariance.from_data(draws, center=center, divisor=divisor)


def reference_tree(shape: str, num_variables: int) -> FactorTree:
    """The three-layer (sixteen variables) or four-layer structure."""
    if shape == "four-layer":
        return four_layer_tree(num_variables)
    if shape == "three-layer":
        if num_variables != 16:
            raise InputError("The three-layer structure has exactly 16 variables.")
        return three_layer_tree()
    raise InputError(f"Unknown shape {shape!r}; use one of {SHAPES}.")


@dataclass(frozen=True)
class RecoveryScore:
    """Recovery of one fit against the truth; the MSE fields are set only on an exact match."""

    emc: int
    lmc: Tuple[int, ...]
    mse_lambda: Optional[float]
    mse_psi: Optional[float]
    num_factors: int
    num_layers: int
    layer_sizes: Tuple[int, ...]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _layer_sets(tree: FactorTree) -> List[List[Tuple[int, ...]]]:
    return [sorted(tree.node(label).variables for label in layer) for layer in tree.layers]


def signed_mse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Mean squared loading error after flipping each estimated column to its better sign."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    same = np.sum((estimate - truth) ** 2, axis=0)
    flipped = np.sum((estimate + truth) ** 2, axis=0)
    return float(np.sum(np.minimum(same, flipped)) / truth.size)


def score_recovery(
    fitted_tree: FactorTree,
    loadings: np.ndarray,
    unique_variances: np.ndarray,
    true_tree: FactorTree,
    truth: Truth,
) -> RecoveryScore:
    """Exact-match and layer-match indicators plus sign-adjusted errors."""
    if fitted_tree.num_variables != true_tree.num_variables:
        raise InputError("Fit and truth differ in the number of variables.")
    fitted_layers = _layer_sets(fitted_tree)
    true_layers = _layer_sets(true_tree)
    emc = int(
        fitted_tree.num_factors == true_tree.num_factors
        and fitted_tree.variable_sets() == true_tree.variable_sets()
    )
    lmc = tuple(
        int(t < len(fitted_layers) and fitted_layers[t] == true_layer)
        for t, true_layer in enumerate(true_layers)
    )
    mse_lambda = mse_psi = None
    if emc:
        mse_lambda = signed_mse(loadings, truth.loadings)
        mse_psi = float(np.mean((np.asarray(unique_variances) - truth.unique_variances) ** 2))
    return RecoveryScore(
        emc=emc,
        lmc=lmc,
        mse_lambda=mse_lambda,
        mse_psi=mse_psi,
        num_factors=fitted_tree.num_factors,
        num_layers=fitted_tree.depth,
        layer_sizes=tuple(len(layer) for layer in fitted_layers),
    )


def score_fit(fit: FitResult, true_tree: FactorTree, truth: Truth) -> RecoveryScore:
    """:func:`score_recovery` on a :class:`FitResult`."""
    return score_recovery(fit.tree, fit.loadings, fit.unique_variances, true_tree, truth)


def replication_seed(seed: int, setting_index: int, replicate: int) -> np.random.SeedSequence:
    """Seed sequence of one replication."""
    return np.random.SeedSequence([seed, setting_index, replicate])


def fixed_truth_seed(seed: int, num_variables: int) -> np.random.SeedSequence:
    """Seed sequence of the truth shared by every replication with ``num_variables``."""
    return np.random.SeedSequence([seed, num_variables])


@dataclass(frozen=True, eq=False)
class _Replication:
    setting_index: int
    num_variables: int
    num_obs: int
    replicate: int
    seed: int
    shape: str
    truth_mode: str
    oracle: bool
    divisor: str
    center: bool
    config: ICBConfig


def _run_replication(task: _Replication) -> Dict[str, Any]:
    tree = reference_tree(task.shape, task.num_variables)
    sequence = replication_seed(task.seed, task.setting_index, task.replicate)
    truth_sequence, data_sequence, fit_sequence = sequence.spawn(3)
    if task.truth_mode == "fixed":
        truth_sequence = fixed_truth_seed(task.seed, task.num_variables)
    truth = generate_truth(TruthSpec(tree), np.random.default_rng(truth_sequence))
    fit_seed = int(fit_sequence.generate_state(1)[0])
    row: Dict[str, Any] = {
        "J": task.num_variables,
        "N": task.num_obs,
        "replicate": task.replicate,
        "seed": fit_seed,
        "failed": False,
        "error": "",
    }
    try:
        sample = sample_covariance(
            truth.covariance,
            task.num_obs,
            np.random.default_rng(data_sequence),
            task.divisor,
            task.center,
            task.oracle,
        )
        fit = fit_hierarchical(sample, task.config, fit_seed, n_jobs=1)
        score = score_fit(fit, tree, truth)
    except (HierFactorsException, ValueError, ArithmeticError, np.linalg.LinAlgError) as error:
        row.update(failed=True, error=f"{type(error).__name__}: {error}")
        return row
    row.update(
        K=score.num_factors,
        T=score.num_layers,
        EMC=score.emc,
        MSE_lambda=score.mse_lambda,
        MSE_psi=score.mse_psi,
    )
    for t in range(1, len(score.lmc)):
        row[f"L{t + 1}_size"] = score.layer_sizes[t] if t < len(score.layer_sizes) else 0
        row[f"LMC{t + 1}"] = score.lmc[t]
    return row


@dataclass(frozen=True, eq=False)
class BenchmarkResult:
    """Per-replication rows and per-setting aggregates."""

    replications: pd.DataFrame
    summary: pd.DataFrame


def summarize(replications: pd.DataFrame) -> pd.DataFrame:
    """Aggregate replication rows into one row per ``(J, N)`` setting.

    Mean MSEs are taken over exact-match replications only.
    """
    rows = []
    for (num_variables, num_obs), group in replications.groupby(["J", "N"], sort=False):
        done = group[~group["failed"].astype(bool)]
        row: Dict[str, Any] = {
            "J": num_variables,
            "N": num_obs,
            "reps": len(group),
            "failures": int(group["failed"].sum()),
        }
        if len(done):
            row["K_mean"] = float(done["K"].mean())
            row["T_mean"] = float(done["T"].mean())
            row["EMC"] = float(done["EMC"].mean())
            for column in sorted(c for c in done.columns if c.endswith("_size")):
                row[f"{column}_mean"] = float(done[column].mean())
            for column in sorted(c for c in done.columns if c.startswith("LMC")):
                row[column] = float(done[column].mean())
            exact = done[done["EMC"] == 1]
            row["MSE_lambda"] = float(exact["MSE_lambda"].mean()) if len(exact) else math.nan
            row["MSE_psi"] = float(exact["MSE_psi"].mean()) if len(exact) else math.nan
        rows.append(row)
    return pd.DataFrame(rows)


def run_benchmark(
    settings: Sequence[Tuple[int, int]],
    reps: int,
    config: ICBConfig = ICBConfig(),
    seed: int = 0,
    shape: str = "four-layer",
    truth_mode: str = "fixed",
    oracle: bool = False,
    divisor: str = "n",
    center: bool = False,
    n_jobs: int = 1,
    on_replication: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> BenchmarkResult:
    """Fit ``reps`` simulated data sets per ``(J, N)`` setting and score each.

    Replication failures are recorded in the rows, never raised.
    """
    if reps < 1:
        raise InputError("Need at least one replication.")
    if truth_mode not in TRUTH_MODES:
        raise InputError(f"Unknown truth mode {truth_mode!r}; use one of {TRUTH_MODES}.")
    tasks = []
    for setting_index, (num_variables, num_obs) in enumerate(settings):
        reference_tree(shape, num_variables)
        if num_obs <= num_variables:
            raise InputError(f"Setting J={num_variables}, N={num_obs} needs N > J.")
        for replicate in range(reps):
            tasks.append(
                _Replication(
                    setting_index,
                    num_variables,
                    num_obs,
                    replicate,
                    seed,
                    shape,
                    truth_mode,
                    oracle,
                    divisor,
                    center,
                    config,
                )
            )
    rows: List[Dict[str, Any]] = []
    if n_jobs > 1 and len(tasks) > 1:
        with multiprocessing.Pool(min(n_jobs, len(tasks))) as pool:
            for row in pool.imap(_run_replication, tasks):
                rows.append(row)
                _report(row, len(rows), len(tasks), on_replication)
    else:
        for task in tasks:
            row = _run_replication(task)
            rows.append(row)
            _report(row, len(rows), len(tasks), on_replication)
    replications = pd.DataFrame(rows)
    return BenchmarkResult(replications, summarize(replications))


def _report(
    row: Dict[str, Any],
    done: int,
    total: int,
    on_replication: Optional[Callable[[Dict[str, Any]], None]],
) -> None:
    if row["failed"]:
        LOGGER.warning(
            "Replication %d at J=%d, N=%d failed: %s",
            row["replicate"],
            row["J"],
            row["N"],
            row["error"],
        )
    else:
        LOGGER.info(
            "Replication %d/%d at J=%d, N=%d: EMC=%d, K=%d.",
            done,
            total,
            row["J"],
            row["N"],
            row["EMC"],
            row["K"],
        )
    if on_replication is not None:
        on_replication(row)


def frobenius_rate(
    sigma: np.ndarray,
    sizes: Sequence[int],
    reps: int,
    rng: np.random.Generator,
    divisor: str = "n",
) -> Tuple[Dict[int, float], float]:
    """Mean ``||S - Sigma||_F`` per sample size and the fitted log-log slope."""
    means = {}
    for num_obs in sizes:
        deviations = [
            linalg.norm(sample_covariance(sigma, num_obs, rng, divisor).matrix - sigma)
            for _ in range(reps)
        ]
        means[int(num_obs)] = float(np.mean(deviations))
    slope = np.polyfit(np.log(list(means)), np.log(list(means.values())), 1)[0]
    return means, float(slope)
