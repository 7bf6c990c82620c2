"""Factor trees, loading patterns and block partitions."""
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import AmbiguousRowError, TreeStructureError

MIN_FACTOR_SIZE = 3
MIN_PARENT_SIZE = 7


@dataclass(frozen=True)
class FactorNode:
    """One latent factor: its label, the 1-based variables loading on it and its links."""

    label: int
    variables: Tuple[int, ...]
    parent: Optional[int] = None
    children: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "variables", tuple(sorted(int(v) for v in self.variables)))
        object.__setattr__(self, "children", tuple(int(c) for c in self.children))

    @property
    def size(self) -> int:
        return len(self.variables)

    @property
    def min_variable(self) -> int:
        return self.variables[0] if self.variables else 0

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class FactorTree:
    """An immutable tree of factors over ``num_variables`` observed variables.

    Construction checks structural well-formedness only; the hierarchical
    constraints are reported by :func:`validate_tree`.
    """

    num_variables: int
    factors: Tuple[FactorNode, ...]
    _index: Dict[int, FactorNode] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        _check_structure(self.num_variables, tuple(self.factors))
        object.__setattr__(
            self, "factors", tuple(sorted(self.factors, key=lambda node: node.label))
        )
        object.__setattr__(self, "_index", {node.label: node for node in self.factors})

    @classmethod
    def from_variable_sets(
        cls, num_variables: int, variable_sets: Sequence[Iterable[int]]
    ) -> "FactorTree":
        """Build a tree from nested 1-based variable sets.

        Factor ``k`` gets label ``k + 1``; its parent is the smallest strict
        superset among the other sets.
        """
        sets = [frozenset(int(v) for v in s) for s in variable_sets]
        if len(set(sets)) != len(sets):
            raise TreeStructureError("Two factors share the same variable set.")
        parents: List[Optional[int]] = []
        for position, current in enumerate(sets):
            supersets = [
                (len(other), other_position)
                for other_position, other in enumerate(sets)
                if other_position != position and current < other
            ]
            parents.append(min(supersets)[1] + 1 if supersets else None)
        nodes = []
        for position, current in enumerate(sets):
            label = position + 1
            children = sorted(
                (child + 1 for child, parent in enumerate(parents) if parent == label),
                key=lambda child_label: min(sets[child_label - 1]),
            )
            nodes.append(FactorNode(label, tuple(current), parents[position], tuple(children)))
        return cls(num_variables, tuple(nodes))

    @property
    def num_factors(self) -> int:
        return len(self.factors)

    @property
    def labels(self) -> Tuple[int, ...]:
        return tuple(sorted(self._index))

    @property
    def root(self) -> FactorNode:
        return next(node for node in self.factors if node.parent is None)

    def node(self, label: int) -> FactorNode:
        """Returns the factor with the given label."""
        try:
            return self._index[label]
        except KeyError as error:
            raise TreeStructureError(f"No factor labelled {label}.") from error

    def children_of(self, label: int) -> Tuple[int, ...]:
        """Returns the child labels of a factor."""
        return self.node(label).children

    def descendants(self, label: int) -> Tuple[int, ...]:
        """Returns every factor strictly below ``label``, breadth first."""
        found = []
        queue = deque(self.children_of(label))
        while queue:
            current = queue.popleft()
            found.append(current)
            queue.extend(self.children_of(current))
        return tuple(found)

    @property
    def layers(self) -> List[Tuple[int, ...]]:
        return compute_layers(self)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def variable_sets(self) -> Dict[int, Tuple[int, ...]]:
        """Maps each label to its variable tuple."""
        return {node.label: node.variables for node in self.factors}


def _check_structure(num_variables: int, factors: Sequence[FactorNode]) -> None:
    if num_variables < 1:
        raise TreeStructureError(f"num_variables must be positive, got {num_variables}.")
    if not factors:
        raise TreeStructureError("A factor tree needs at least one factor.")
    labels = [node.label for node in factors]
    if len(set(labels)) != len(labels):
        raise TreeStructureError(f"Duplicate factor labels in {sorted(labels)}.")
    index = {node.label: node for node in factors}
    for node in factors:
        if node.label < 1:
            raise TreeStructureError(f"Factor labels must be positive, got {node.label}.")
        if not node.variables:
            raise TreeStructureError(f"Factor {node.label} has no variables.")
        if len(set(node.variables)) != len(node.variables):
            raise TreeStructureError(f"Factor {node.label} repeats a variable.")
        if node.variables[0] < 1 or node.variables[-1] > num_variables:
            raise TreeStructureError(
                f"Factor {node.label} has variables outside 1..{num_variables}."
            )
        if node.parent is not None:
            if node.parent not in index:
                raise TreeStructureError(
                    f"Factor {node.label} references unknown parent {node.parent}."
                )
            if node.label not in index[node.parent].children:
                raise TreeStructureError(
                    f"Factor {node.parent} does not list child {node.label}."
                )
        for child in node.children:
            if child not in index or index[child].parent != node.label:
                raise TreeStructureError(
                    f"Factor {node.label} lists child {child} whose parent differs."
                )
        if len(set(node.children)) != len(node.children):
            raise TreeStructureError(f"Factor {node.label} lists a child twice.")
    roots = [node.label for node in factors if node.parent is None]
    if len(roots) != 1:
        raise TreeStructureError(f"Expected exactly one root factor, found {roots}.")
    seen = set()
    queue = deque(roots)
    while queue:
        current = queue.popleft()
        if current in seen:
            raise TreeStructureError(f"Factor {current} is reachable twice.")
        seen.add(current)
        queue.extend(index[current].children)
    if len(seen) != len(factors):
        raise TreeStructureError("Some factors are not reachable from the root.")


@dataclass(frozen=True)
class ConstraintViolation:
    """A hierarchical constraint that a factor breaks."""

    constraint: str
    label: int
    message: str


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate_tree`; empty when every constraint holds."""

    violations: Tuple[ConstraintViolation, ...] = ()

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def constraints(self) -> Tuple[str, ...]:
        """Names of the violated constraints, without repetition."""
        return tuple(dict.fromkeys(v.constraint for v in self.violations))

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def validate_tree(tree: FactorTree) -> ValidationReport:
    """Check the four hierarchical constraints and the canonical labelling.

    Constraint names in the report are ``root``, ``nesting``, ``partition``,
    ``child_order``, ``label_order`` and ``size``.
    """
    violations: List[ConstraintViolation] = []
    every_variable = tuple(range(1, tree.num_variables + 1))

    general = tree._index.get(1)
    if general is None or general.parent is not None:
        violations.append(ConstraintViolation("root", 1, "Factor 1 is not the root factor."))
    elif general.variables != every_variable:
        violations.append(
            ConstraintViolation("root", 1, "Factor 1 is not loaded by every variable.")
        )

    labels = tree.labels
    for position, first in enumerate(labels):
        v_first = set(tree.node(first).variables)
        for second in labels[position + 1 :]:
            v_second = set(tree.node(second).variables)
            nested = v_second < v_first or v_first < v_second
            if not nested and v_first & v_second:
                violations.append(
                    ConstraintViolation(
                        "nesting", second, f"Factors {first} and {second} overlap without nesting."
                    )
                )

    for node in tree.factors:
        if len(node.children) == 1:
            violations.append(
                ConstraintViolation("partition", node.label, "Factor has exactly one child.")
            )
        if node.children:
            covered: List[int] = []
            for child in node.children:
                covered.extend(tree.node(child).variables)
            if sorted(covered) != list(node.variables):
                violations.append(
                    ConstraintViolation(
                        "partition", node.label, "Children do not partition the factor's variables."
                    )
                )
            by_label = sorted(node.children)
            by_min = sorted(node.children, key=lambda child: tree.node(child).min_variable)
            if by_label != by_min:
                violations.append(
                    ConstraintViolation(
                        "child_order",
                        node.label,
                        "Child labels do not follow their smallest variables.",
                    )
                )

    if labels != tuple(range(1, tree.num_factors + 1)):
        violations.append(
            ConstraintViolation("label_order", labels[-1], "Labels are not consecutive from 1.")
        )
    parents = sorted(node.label for node in tree.factors if node.children)
    for earlier, later in zip(parents, parents[1:]):
        if max(tree.children_of(earlier)) > min(tree.children_of(later)):
            violations.append(
                ConstraintViolation(
                    "label_order",
                    later,
                    f"Children of factor {earlier} are not labelled before those of {later}.",
                )
            )
    for node in tree.factors:
        if node.parent is not None and node.label < node.parent:
            violations.append(
                ConstraintViolation(
                    "label_order", node.label, "Factor is labelled before its parent."
                )
            )

    for node in tree.factors:
        if node.size < MIN_FACTOR_SIZE:
            violations.append(
                ConstraintViolation("size", node.label, f"Factor has only {node.size} variables.")
            )
        elif len(node.children) >= 2 and node.size < MIN_PARENT_SIZE:
            violations.append(
                ConstraintViolation(
                    "size",
                    node.label,
                    f"Factor with {len(node.children)} children has only {node.size} variables.",
                )
            )
    return ValidationReport(tuple(violations))


def compute_layers(tree: FactorTree) -> List[Tuple[int, ...]]:
    """Group factor labels by depth; the first layer holds the root only."""
    layers = []
    current = [tree.root.label]
    while current:
        layers.append(tuple(sorted(current)))
        current = [child for label in current for child in tree.children_of(label)]
    return layers


def canonical_relabel(tree: FactorTree) -> FactorTree:
    """Relabel breadth first, ordering siblings by their smallest variable."""
    order = []
    queue = deque([tree.root.label])
    while queue:
        current = queue.popleft()
        order.append(current)
        queue.extend(
            sorted(tree.children_of(current), key=lambda child: tree.node(child).min_variable)
        )
    mapping = {old: new for new, old in enumerate(order, start=1)}
    nodes = []
    for old in order:
        node = tree.node(old)
        children = sorted(mapping[child] for child in node.children)
        parent = None if node.parent is None else mapping[node.parent]
        nodes.append(FactorNode(mapping[old], node.variables, parent, tuple(children)))
    return FactorTree(tree.num_variables, tuple(nodes))


@dataclass(frozen=True, eq=False)
class LoadingPattern:
    """Boolean support of a loading matrix; ``True`` marks a free loading.

    Columns follow the factor labels in ascending order.
    """

    mask: np.ndarray

    def __post_init__(self) -> None:
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise TreeStructureError("A loading pattern must be a two-dimensional mask.")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def num_variables(self) -> int:
        return self.mask.shape[0]

    @property
    def num_factors(self) -> int:
        return self.mask.shape[1]

    @property
    def num_free(self) -> int:
        return int(self.mask.sum())

    def column_support(self, column: int) -> np.ndarray:
        """0-based rows of the free loadings in a 0-based column."""
        return np.flatnonzero(self.mask[:, column])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LoadingPattern):
            return NotImplemented
        return self.mask.shape == other.mask.shape and bool(np.all(self.mask == other.mask))

    def __hash__(self) -> int:
        return hash((self.mask.shape, self.mask.tobytes()))


def pattern_from_tree(tree: FactorTree) -> LoadingPattern:
    """The zero pattern a tree imposes on a ``J x K`` loading matrix."""
    mask = np.zeros((tree.num_variables, tree.num_factors), dtype=bool)
    for column, label in enumerate(tree.labels):
        rows = np.asarray(tree.node(label).variables) - 1
        mask[rows, column] = True
    return LoadingPattern(mask)


def tree_from_pattern(pattern: LoadingPattern) -> FactorTree:
    """Rebuild a tree from the nested column supports of a pattern."""
    sets = [tuple(pattern.column_support(k) + 1) for k in range(pattern.num_factors)]
    return FactorTree.from_variable_sets(pattern.num_variables, sets)


def tree_to_dict(tree: FactorTree) -> Dict[str, Any]:
    """Nested-record form of a tree, 1-based variables."""

    def _node(label: int) -> Dict[str, Any]:
        node = tree.node(label)
        return {
            "label": node.label,
            "variables": list(node.variables),
            "children": [_node(child) for child in node.children],
        }

    return {"num_variables": tree.num_variables, "root": _node(tree.root.label)}


def tree_from_dict(document: Dict[str, Any]) -> FactorTree:
    """Inverse of :func:`tree_to_dict`."""
    try:
        num_variables = int(document["num_variables"])
        root = document["root"]
    except (KeyError, TypeError, ValueError) as error:
        raise TreeStructureError(f"Tree document is missing {error}.") from error

    nodes: List[FactorNode] = []

    def _visit(record: Dict[str, Any], parent: Optional[int]) -> None:
        try:
            label = int(record["label"])
            variables = tuple(int(v) for v in record["variables"])
            children = list(record.get("children", []))
        except (KeyError, TypeError, ValueError) as error:
            raise TreeStructureError(f"Malformed tree node {record!r}.") from error
        child_labels = []
        for child in children:
            try:
                child_labels.append(int(child["label"]))
            except (KeyError, TypeError, ValueError) as error:
                raise TreeStructureError(f"Malformed tree node {child!r}.") from error
        nodes.append(FactorNode(label, variables, parent, tuple(child_labels)))
        for child in children:
            _visit(child, label)

    _visit(root, None)
    return FactorTree(num_variables, tuple(nodes))


def three_layer_tree() -> FactorTree:
    """The sixteen-variable, six-factor, three-layer reference structure."""
    sets = [
        range(1, 17),
        range(1, 9),
        range(9, 13),
        range(13, 17),
        range(1, 5),
        range(5, 9),
    ]
    return FactorTree.from_variable_sets(16, sets)


def four_layer_tree(num_variables: int = 36) -> FactorTree:
    """The ten-factor, four-layer reference structure; ``num_variables`` must be divisible by 18."""
    if num_variables < 18 or num_variables % 18:
        raise TreeStructureError(
            f"The four-layer structure needs a multiple of 18 variables, got {num_variables}."
        )
    j = num_variables

    def _span(start: int, stop: int) -> range:
        return range(start + 1, stop + 1)

    sets = [
        _span(0, j),
        _span(0, j // 3),
        _span(j // 3, j),
        _span(0, j // 6),
        _span(j // 6, j // 3),
        _span(j // 3, 5 * j // 9),
        _span(5 * j // 9, 7 * j // 9),
        _span(7 * j // 9, j),
        _span(j // 3, 4 * j // 9),
        _span(4 * j // 9, 5 * j // 9),
    ]
    return FactorTree.from_variable_sets(j, sets)


@dataclass(frozen=True)
class BlockPartition:
    """Rows of a factor split into child blocks.

    ``blocks`` holds 0-based row positions, ordered by their smallest row;
    ``sources[s]`` is the column group of the loading matrix block ``s``
    came from, and ``group_size`` is the number of columns per group.
    """

    blocks: Tuple[Tuple[int, ...], ...]
    group_size: int = 1
    sources: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        blocks = tuple(tuple(sorted(int(r) for r in block)) for block in self.blocks)
        if any(not block for block in blocks):
            raise TreeStructureError("Partition blocks must be nonempty.")
        rows = [r for block in blocks for r in block]
        if len(set(rows)) != len(rows):
            raise TreeStructureError("Partition blocks overlap.")
        sources = tuple(self.sources) if self.sources else tuple(range(len(blocks)))
        if len(sources) != len(blocks):
            raise TreeStructureError("One source group is needed per block.")
        paired = sorted(zip(blocks, sources), key=lambda pair: pair[0][0])
        object.__setattr__(self, "blocks", tuple(block for block, _ in paired))
        object.__setattr__(self, "sources", tuple(source for _, source in paired))

    @classmethod
    def from_assignment(
        cls, assignment: Sequence[int], num_groups: int, group_size: int = 1
    ) -> "BlockPartition":
        """Build from a per-row group index; empty groups are dropped."""
        assignment = np.asarray(assignment)
        blocks, sources = [], []
        for group in range(num_groups):
            rows = np.flatnonzero(assignment == group)
            if rows.size:
                blocks.append(tuple(rows.tolist()))
                sources.append(group)
        return cls(tuple(blocks), group_size, tuple(sources))

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def num_rows(self) -> int:
        return sum(len(block) for block in self.blocks)

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(len(block) for block in self.blocks)

    def group_columns(self, block: int) -> np.ndarray:
        """0-based loading columns of the group that produced ``block``."""
        start = 1 + self.sources[block] * self.group_size
        return np.arange(start, start + self.group_size)

    def to_list(self) -> List[List[int]]:
        """1-based rows per block."""
        return [[row + 1 for row in block] for block in self.blocks]


def group_maxima(loadings: np.ndarray, num_groups: int) -> np.ndarray:
    """Row-wise largest absolute loading within each column group.

    ``loadings`` has one leading column followed by ``num_groups`` groups of
    equal width; the result is ``rows x num_groups``.
    """
    loadings = np.asarray(loadings, dtype=float)
    width, remainder = divmod(loadings.shape[1] - 1, num_groups)
    if num_groups < 1 or width < 1 or remainder:
        raise TreeStructureError(
            f"A {loadings.shape[1]}-column matrix cannot hold {num_groups} equal column groups."
        )
    grouped = np.abs(loadings[:, 1:]).reshape(loadings.shape[0], num_groups, width)
    return grouped.max(axis=2)


def partition_from_loading(
    loadings: np.ndarray, num_groups: int, tol: float
) -> BlockPartition:
    """Assign every row to the single column group it loads on above ``tol``.

    Raises :class:`AmbiguousRowError` for a row with several or no such groups.
    """
    if tol <= 0:
        raise ValueError("tol must be positive.")
    maxima = group_maxima(loadings, num_groups)
    active = maxima >= tol
    counts = active.sum(axis=1)
    bad = np.flatnonzero(counts != 1)
    if bad.size:
        raise AmbiguousRowError(int(bad[0]))
    width = (np.asarray(loadings).shape[1] - 1) // num_groups
    return BlockPartition.from_assignment(active.argmax(axis=1), num_groups, width)
