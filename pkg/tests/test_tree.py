"""Test cases for the __tree__ module."""
import numpy as np
import pytest

from hier_factors.errors import AmbiguousRowError, TreeStructureError
from hier_factors.tree import (
    BlockPartition,
    FactorNode,
    FactorTree,
    LoadingPattern,
    canonical_relabel,
    four_layer_tree,
    group_maxima,
    partition_from_loading,
    pattern_from_tree,
    tree_from_dict,
    tree_from_pattern,
    tree_to_dict,
    validate_tree,
)


def test_three_layer_layers(three_layer: FactorTree) -> None:
    """Tests the layers of the sixteen-variable reference tree."""
    assert three_layer.layers == [(1,), (2, 3, 4), (5, 6)]
    assert three_layer.num_factors == 6
    assert three_layer.depth == 3
    assert three_layer.node(2).variables == tuple(range(1, 9))
    assert three_layer.children_of(2) == (5, 6)


def test_four_layer_layers(four_layer: FactorTree) -> None:
    """Tests the layers of the 36-variable reference tree."""
    assert four_layer.layers == [(1,), (2, 3), (4, 5, 6, 7, 8), (9, 10)]
    assert four_layer.node(9).variables == (13, 14, 15, 16)
    assert four_layer.descendants(3) == (6, 7, 8, 9, 10)


def test_four_layer_needs_multiple_of_18() -> None:
    """Tests the four-layer tree rejecting unsupported sizes."""
    with pytest.raises(TreeStructureError):
        four_layer_tree(40)


def test_reference_trees_are_valid(three_layer: FactorTree, four_layer: FactorTree) -> None:
    """Tests that both reference trees satisfy every constraint."""
    assert validate_tree(three_layer).is_valid
    assert validate_tree(four_layer).is_valid
    assert validate_tree(four_layer_tree(54)).is_valid


def test_small_factor_violates_size() -> None:
    """Tests a two-variable factor being reported."""
    tree = FactorTree.from_variable_sets(9, [range(1, 10), (1, 2), range(3, 10)])
    report = validate_tree(tree)
    assert not report.is_valid
    assert "size" in report.constraints()
    assert any(v.label == 2 for v in report)


def test_small_parent_violates_size() -> None:
    """Tests a six-variable factor with two children being reported."""
    tree = FactorTree.from_variable_sets(
        12, [range(1, 13), range(1, 7), range(7, 13), (1, 2, 3), (4, 5, 6)]
    )
    assert "size" in validate_tree(tree).constraints()


def test_single_child_violation() -> None:
    """Tests a factor with exactly one child being reported."""
    tree = FactorTree.from_variable_sets(9, [range(1, 10), range(1, 5)])
    assert "partition" in validate_tree(tree).constraints()


def test_overlap_violation() -> None:
    """Tests overlapping, non-nested factors being reported."""
    tree = FactorTree.from_variable_sets(12, [range(1, 13), range(1, 9), range(5, 13)])
    assert "nesting" in validate_tree(tree).constraints()


def test_labels_out_of_order() -> None:
    """Tests non-canonical labels being reported and then repaired."""
    nodes = (
        FactorNode(1, range(1, 13), None, (2, 3)),
        FactorNode(2, range(7, 13), 1),
        FactorNode(3, range(1, 7), 1),
    )
    tree = FactorTree(12, nodes)
    assert "child_order" in validate_tree(tree).constraints()
    relabelled = canonical_relabel(tree)
    assert validate_tree(relabelled).is_valid
    assert relabelled.node(2).variables == tuple(range(1, 7))


def test_structure_errors() -> None:
    """Tests malformed trees raising at construction."""
    with pytest.raises(TreeStructureError):
        FactorTree(4, (FactorNode(1, (1, 2, 3, 4)), FactorNode(1, (1, 2))))
    with pytest.raises(TreeStructureError):
        FactorTree(4, (FactorNode(1, (1, 2, 5)),))
    with pytest.raises(TreeStructureError):
        FactorTree(4, (FactorNode(1, (1, 2, 3, 4), None, (2,)),))
    with pytest.raises(TreeStructureError):
        FactorTree.from_variable_sets(4, [(1, 2, 3, 4), (1, 2, 3, 4)])


def test_pattern_round_trip(four_layer: FactorTree) -> None:
    """Tests rebuilding a tree from its loading pattern."""
    pattern = pattern_from_tree(four_layer)
    assert pattern.num_free == sum(node.size for node in four_layer.factors)
    rebuilt = tree_from_pattern(pattern)
    assert rebuilt.variable_sets() == four_layer.variable_sets()
    assert pattern_from_tree(rebuilt) == pattern


def test_dict_round_trip(three_layer: FactorTree) -> None:
    """Tests the nested-record tree form."""
    document = tree_to_dict(three_layer)
    assert document["num_variables"] == 16
    assert document["root"]["label"] == 1
    assert [child["label"] for child in document["root"]["children"]] == [2, 3, 4]
    assert tree_from_dict(document) == three_layer


def test_dict_missing_fields() -> None:
    """Tests a malformed tree document raising."""
    with pytest.raises(TreeStructureError):
        tree_from_dict({"root": {}})
    with pytest.raises(TreeStructureError):
        tree_from_dict({"num_variables": 3, "root": {"label": 1}})


def test_loading_pattern_is_read_only() -> None:
    """Tests that a pattern's mask cannot be changed."""
    pattern = LoadingPattern(np.ones((3, 1)))
    with pytest.raises(ValueError):
        pattern.mask[0, 0] = False


def test_block_partition_orders_blocks() -> None:
    """Tests blocks being sorted by their smallest row with their sources."""
    partition = BlockPartition(((4, 5, 6), (0, 1, 2)), group_size=2, sources=(0, 1))
    assert partition.blocks == ((0, 1, 2), (4, 5, 6))
    assert partition.sources == (1, 0)
    assert partition.sizes == (3, 3)
    assert partition.group_columns(0).tolist() == [3, 4]
    assert partition.to_list() == [[1, 2, 3], [5, 6, 7]]


def test_block_partition_rejects_overlap() -> None:
    """Tests overlapping blocks raising."""
    with pytest.raises(TreeStructureError):
        BlockPartition(((0, 1), (1, 2)))


def test_from_assignment_drops_empty_groups() -> None:
    """Tests empty groups being dropped from an assignment."""
    partition = BlockPartition.from_assignment([2, 2, 0, 0], 3)
    assert partition.blocks == ((0, 1), (2, 3))
    assert partition.sources == (2, 0)


def test_partition_from_loading() -> None:
    """Tests assigning rows by their single active group."""
    loadings = np.array(
        [
            [1.0, 0.8, 0.0],
            [1.0, 0.5, 0.001],
            [1.0, 0.0, 0.9],
            [1.0, 0.0, -0.7],
        ]
    )
    partition = partition_from_loading(loadings, 2, 0.01)
    assert partition.blocks == ((0, 1), (2, 3))
    assert group_maxima(loadings, 2)[3].tolist() == [0.0, 0.7]


def test_partition_from_loading_ambiguous_row() -> None:
    """Tests a row loading on two groups raising with its position."""
    loadings = np.array([[1.0, 0.8, 0.0], [1.0, 0.5, 0.5], [1.0, 0.0, 0.9]])
    with pytest.raises(AmbiguousRowError) as error:
        partition_from_loading(loadings, 2, 0.01)
    assert error.value.row == 1
