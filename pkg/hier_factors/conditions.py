"""Rank and size checks of a true loading matrix against its factor tree.

Every check yields one :class:`ClauseResult` per factor (or factor pair)
with status ``pass``, ``fail`` or ``inconclusive``. Searches for disjoint
full-rank row subsets stop after ``budget`` candidates and report
``inconclusive`` rather than passing.
"""
import itertools
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .config import ICBConfig, hyperparam_schedule
from .errors import PatternMismatchError
from .tree import FactorTree, pattern_from_tree, validate_tree

LOGGER = logging.getLogger(__name__)

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"
DEFAULT_TOL = 1e-8
DEFAULT_BUDGET = 100_000
_CHUNK = 20_000


@dataclass(frozen=True)
class ClauseResult:
    """Status of one clause for one factor."""

    clause: str
    label: str
    status: str
    detail: str = ""

    def to_dict(self) -> Dict[str, str]:
        return asdict(self)


@dataclass(frozen=True)
class ConditionReport:
    """All clause results for a loading matrix."""

    clauses: Tuple[ClauseResult, ...]

    @property
    def passed(self) -> bool:
        return all(clause.status == PASS for clause in self.clauses)

    def counts(self) -> Dict[str, int]:
        """Number of clauses per status."""
        counts = {PASS: 0, FAIL: 0, INCONCLUSIVE: 0}
        for clause in self.clauses:
            counts[clause.status] += 1
        return counts

    def failures(self, clause: Optional[str] = None) -> List[ClauseResult]:
        """Failed clauses, optionally of a single kind."""
        return [
            result
            for result in self.clauses
            if result.status == FAIL and (clause is None or result.clause == clause)
        ]

    def status_of(self, clause: str) -> str:
        """Worst status over every result of ``clause``."""
        statuses = {result.status for result in self.clauses if result.clause == clause}
        for status in (FAIL, INCONCLUSIVE, PASS):
            if status in statuses:
                return status
        raise KeyError(clause)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "counts": self.counts(),
            "clauses": [clause.to_dict() for clause in self.clauses],
        }

    def to_text(self) -> str:
        """One line per clause."""
        lines = [
            f"{clause.status.upper():<13} {clause.clause:<24} {clause.label:<20} "
            f"{clause.detail}".rstrip()
            for clause in self.clauses
        ]
        counts = self.counts()
        lines.append(
            f"{counts[PASS]} passed, {counts[FAIL]} failed, {counts[INCONCLUSIVE]} inconclusive"
        )
        return "\n".join(lines) + "\n"


def _full_rank(matrices: np.ndarray, tol: float) -> np.ndarray:
    """Whether each stacked matrix has rank ``min(rows, columns)``."""
    values = np.linalg.svd(matrices, compute_uv=False)
    largest = values[..., :1]
    return np.all(values > tol * np.maximum(largest, np.finfo(float).tiny), axis=-1)


def _rank(matrix: np.ndarray, tol: float) -> int:
    if matrix.size == 0:
        return 0
    values = np.linalg.svd(matrix, compute_uv=False)
    if values[0] == 0:
        return 0
    return int(np.sum(values > tol * values[0]))


def _all_full_rank(
    loadings: np.ndarray,
    row_sets: Iterator[Tuple[int, ...]],
    columns: Sequence[int],
    tol: float,
) -> Optional[Tuple[int, ...]]:
    """First row set whose submatrix is rank deficient, or ``None``."""
    columns = np.asarray(columns)
    while True:
        chunk = list(itertools.islice(row_sets, _CHUNK))
        if not chunk:
            return None
        rows = np.asarray(chunk)
        stacked = loadings[rows[:, :, None], columns[None, None, :]]
        good = _full_rank(stacked, tol)
        if not np.all(good):
            return chunk[int(np.argmin(good))]


def _greedy_basis(
    first: np.ndarray, second: np.ndarray, rows: Sequence[int], tol: float
) -> List[int]:
    """Rank-raising rows of ``first`` whose removal keeps ``second`` at full column rank."""
    chosen: List[int] = []
    for row in rows:
        trial = chosen + [row]
        if _rank(first[trial], tol) <= len(chosen):
            continue
        rest = [other for other in rows if other not in trial]
        if _rank(second[rest], tol) == second.shape[1]:
            chosen = trial
            if len(chosen) == first.shape[1]:
                break
    return chosen


def disjoint_bases(
    first: np.ndarray,
    second: np.ndarray,
    tol: float = DEFAULT_TOL,
    budget: int = DEFAULT_BUDGET,
) -> str:
    """Whether rows split into disjoint sets forming square full-rank blocks of both matrices.

    ``first`` and ``second`` share rows; the first set has ``first.shape[1]``
    rows and the second ``second.shape[1]``. A greedy basis is tried before an
    enumeration capped at ``budget`` candidates.
    """
    num_rows = first.shape[0]
    size_first, size_second = first.shape[1], second.shape[1]
    if size_first + size_second > num_rows:
        return FAIL
    if _rank(first, tol) < size_first or _rank(second, tol) < size_second:
        return FAIL
    everything = list(range(num_rows))
    if len(_greedy_basis(first, second, everything, tol)) == size_first:
        return PASS
    tried = 0
    for subset in itertools.combinations(everything, size_first):
        if tried >= budget:
            return INCONCLUSIVE
        tried += 1
        if _rank(first[list(subset)], tol) < size_first:
            continue
        rest = [row for row in everything if row not in subset]
        if _rank(second[rest], tol) == size_second:
            return PASS
    return FAIL


def _columns(tree: FactorTree, labels: Sequence[int]) -> List[int]:
    position = {label: column for column, label in enumerate(tree.labels)}
    return [position[label] for label in labels]


def _rows(tree: FactorTree, label: int) -> np.ndarray:
    return np.asarray(tree.node(label).variables) - 1


def _check_pattern(loadings: np.ndarray, tree: FactorTree) -> None:
    mask = pattern_from_tree(tree).mask
    if loadings.shape != mask.shape:
        raise PatternMismatchError(
            f"Loadings have shape {loadings.shape} but the tree implies {mask.shape}."
        )
    outside = np.argwhere((loadings != 0) & ~mask)
    if outside.size:
        row, column = outside[0]
        raise PatternMismatchError(
            f"Loading at variable {row + 1}, factor {tree.labels[column]} should be zero."
        )


def _hierarchy_clauses(tree: FactorTree) -> List[ClauseResult]:
    report = validate_tree(tree)
    if report.is_valid:
        return [ClauseResult("hierarchy", "all", PASS, "hierarchical constraints hold")]
    return [
        ClauseResult("hierarchy", f"factor {v.label}", FAIL, f"{v.constraint}: {v.message}")
        for v in report
    ]


def _minimum_size_clauses(tree: FactorTree) -> List[ClauseResult]:
    results = []
    for node in tree.factors:
        if node.size <= 2:
            detail, status = f"only {node.size} variables", FAIL
        elif len(node.children) >= 2 and node.size <= 6:
            detail, status = f"{len(node.children)} children on {node.size} variables", FAIL
        else:
            detail, status = "", PASS
        results.append(ClauseResult("minimum_size", f"factor {node.label}", status, detail))
    return results


def _row_clauses(
    loadings: np.ndarray, tree: FactorTree, tol: float, budget: int
) -> List[ClauseResult]:
    results = []
    for parent in tree.factors:
        for child in parent.children:
            label = f"factor {parent.label}/{child}"
            rows = _rows(tree, child)
            pair_columns = _columns(tree, [parent.label, child])

            pairs = itertools.combinations(rows.tolist(), 2)
            if math.comb(rows.size, 2) > budget:
                status, detail = INCONCLUSIVE, "too many row pairs"
            else:
                bad = _all_full_rank(loadings, pairs, pair_columns, tol)
                status = PASS if bad is None else FAIL
                detail = "" if bad is None else f"rows {bad[0] + 1} and {bad[1] + 1} are dependent"
            results.append(ClauseResult("row_pairs_independent", label, status, detail))

            deletion_columns = _columns(
                tree, [parent.label, child] + list(tree.descendants(child))
            )
            status, detail = PASS, ""
            for removed in rows:
                kept = rows[rows != removed]
                block = loadings[np.ix_(kept, deletion_columns)]
                if _rank(block, tol) < len(deletion_columns):
                    status, detail = FAIL, f"rank drops without variable {removed + 1}"
                    break
            results.append(ClauseResult("row_deletion_rank", label, status, detail))

            grandchildren = tree.children_of(child)
            for first, second in itertools.combinations(grandchildren, 2):
                quad_label = f"factor {parent.label}/{child}/{first},{second}"
                first_pairs = list(itertools.combinations(_rows(tree, first).tolist(), 2))
                second_pairs = list(itertools.combinations(_rows(tree, second).tolist(), 2))
                if len(first_pairs) * len(second_pairs) > budget:
                    results.append(
                        ClauseResult("grandchild_rank", quad_label, INCONCLUSIVE, "too many rows")
                    )
                    continue
                quads = (a + b for a, b in itertools.product(first_pairs, second_pairs))
                bad = _all_full_rank(
                    loadings, quads, _columns(tree, [parent.label, child, first, second]), tol
                )
                status = PASS if bad is None else FAIL
                detail = "" if bad is None else f"rows {[r + 1 for r in bad]} are singular"
                results.append(ClauseResult("grandchild_rank", quad_label, status, detail))
    return results


def _disjoint_bases_clauses(
    loadings: np.ndarray, tree: FactorTree, tol: float, budget: int
) -> List[ClauseResult]:
    results = []
    for parent in tree.factors:
        if not parent.children:
            continue
        rows = _rows(tree, parent.label)
        columns = _columns(tree, [parent.label] + list(tree.descendants(parent.label)))
        status = PASS
        detail = ""
        for left_out in rows:
            kept = rows[rows != left_out]
            block = loadings[np.ix_(kept, columns)]
            outcome = disjoint_bases(block, block, tol, budget)
            if outcome != PASS:
                status, detail = outcome, f"without variable {left_out + 1}"
                if outcome == FAIL:
                    break
        results.append(
            ClauseResult("parent_disjoint_bases", f"factor {parent.label}", status, detail)
        )

        for child in parent.children:
            child_rows = _rows(tree, child)
            descendants = list(tree.descendants(child))
            wide = loadings[np.ix_(child_rows, _columns(tree, [parent.label, child] + descendants))]
            narrow = loadings[np.ix_(child_rows, _columns(tree, [child] + descendants))]
            outcome = disjoint_bases(wide, narrow, tol, budget)
            results.append(
                ClauseResult("child_disjoint_bases", f"factor {parent.label}/{child}", outcome)
            )
    return results


def _hyper_clauses(tree: FactorTree, config: ICBConfig) -> List[ClauseResult]:
    results = []
    for depth, layer in enumerate(tree.layers, start=1):
        for label in layer:
            node = tree.node(label)
            if not node.children:
                continue
            c_max, d = hyperparam_schedule(depth + 1, node.size, config)
            needed = max(len(tree.descendants(child)) for child in node.children) + 1
            ok = c_max >= len(node.children) and d >= needed
            detail = (
                f"c_max={c_max} for {len(node.children)} children, d={d} for {needed} columns"
            )
            results.append(
                ClauseResult("hyper_coverage", f"factor {label}", PASS if ok else FAIL, detail)
            )
    return results


def check_conditions(
    loadings: np.ndarray,
    tree: FactorTree,
    tol: float = DEFAULT_TOL,
    budget: int = DEFAULT_BUDGET,
    tau: Optional[float] = None,
    config: Optional[ICBConfig] = None,
) -> ConditionReport:
    """Run every size and rank check on ``loadings`` for ``tree``.

    Raises :class:`PatternMismatchError` when ``loadings`` has a nonzero
    entry where the tree demands a zero.
    """
    loadings = np.asarray(loadings, dtype=float)
    _check_pattern(loadings, tree)
    clauses = _hierarchy_clauses(tree)
    rank = _rank(loadings, tol)
    clauses.append(
        ClauseResult(
            "full_rank",
            "all",
            PASS if rank == tree.num_factors else FAIL,
            f"rank {rank} of {tree.num_factors}",
        )
    )
    clauses.extend(_minimum_size_clauses(tree))
    clauses.extend(_row_clauses(loadings, tree, tol, budget))
    clauses.extend(_disjoint_bases_clauses(loadings, tree, tol, budget))
    if tau is None and config is not None:
        tau = config.tau
    if tau is not None:
        largest = float(np.max(np.abs(loadings))) if loadings.size else 0.0
        clauses.append(
            ClauseResult(
                "loading_bound",
                "all",
                PASS if largest <= tau else FAIL,
                f"max |loading| {largest:.4g}, bound {tau:g}",
            )
        )
    if config is not None:
        clauses.extend(_hyper_clauses(tree, config))
    report = ConditionReport(tuple(clauses))
    for clause in report.clauses:
        if clause.status == INCONCLUSIVE:
            LOGGER.warning(
                "Check %s for %s is inconclusive: %s",
                clause.clause,
                clause.label,
                clause.detail,
            )
    return report
