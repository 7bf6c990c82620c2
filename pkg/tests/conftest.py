"""Fixtures for hier_factors"""
import numpy as np
import pytest

from hier_factors.config import ALMConfig, Configuration, ICBConfig
from hier_factors.objective import SampleCovariance
from hier_factors.simulation import Truth, TruthSpec, generate_truth
from hier_factors.tree import FactorTree, four_layer_tree, three_layer_tree

ORACLE_N = 10_000


@pytest.fixture(name="three_layer")
def _three_layer() -> FactorTree:
    """Returns the sixteen-variable reference tree."""
    return three_layer_tree()


@pytest.fixture(name="four_layer")
def _four_layer() -> FactorTree:
    """Returns the 36-variable reference tree."""
    return four_layer_tree(36)


@pytest.fixture(name="two_block")
def _two_block() -> FactorTree:
    """Returns an eight-variable tree with two four-variable children."""
    return FactorTree.from_variable_sets(8, [range(1, 9), range(1, 5), range(5, 9)])


@pytest.fixture(name="three_layer_truth")
def _three_layer_truth(three_layer) -> Truth:
    """Returns a seeded true model on the three-layer tree."""
    return generate_truth(TruthSpec(three_layer, seed=11))


@pytest.fixture(name="two_block_truth")
def _two_block_truth(two_block) -> Truth:
    """Returns a seeded true model on the two-block tree."""
    return generate_truth(TruthSpec(two_block, seed=5))


@pytest.fixture(name="oracle_sample")
def _oracle_sample(three_layer_truth) -> SampleCovariance:
    """Returns the exact three-layer covariance with a large nominal sample size."""
    return SampleCovariance(three_layer_truth.covariance, ORACLE_N)


@pytest.fixture(name="small_config")
def _small_config() -> ICBConfig:
    """Returns a search configuration with few multi-start attempts."""
    return ICBConfig(alm=ALMConfig(num_starts=8, min_valid_solutions=4, max_restarts=2))


@pytest.fixture(name="config")
def _config(tmpdir) -> Configuration:
    """Returns a filesystem configuration rooted in a temporary directory."""
    return Configuration(dir_output=tmpdir / "out", dir_logs=tmpdir / "logs")


@pytest.fixture(name="rng")
def _rng() -> np.random.Generator:
    """Returns a seeded generator."""
    return np.random.default_rng(2024)
