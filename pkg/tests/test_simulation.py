"""Test cases for the __simulation__ module."""
import itertools
import logging
import math

import numpy as np
import pandas as pd
import pytest

from hier_factors.config import ALMConfig, ICBConfig
from hier_factors.errors import InputError
from hier_factors.simulation import (
    TruthSpec,
    frobenius_rate,
    generate_truth,
    reference_tree,
    replication_seed,
    run_benchmark,
    sample_covariance,
    score_recovery,
    signed_mse,
    summarize,
)
from hier_factors.tree import FactorTree, pattern_from_tree


def test_generate_truth_ranges(four_layer: FactorTree) -> None:
    """Tests loading magnitudes, general-factor signs and the covariance floor."""
    truth = generate_truth(TruthSpec(four_layer, seed=0))
    mask = pattern_from_tree(four_layer).mask
    support = np.abs(truth.loadings[mask])
    assert support.min() >= 0.5 and support.max() <= 2.0
    assert np.all(truth.loadings[~mask] == 0.0)
    assert np.all(truth.loadings[:, 0] > 0)
    assert np.all(truth.unique_variances == 1.0)
    assert np.linalg.eigvalsh(truth.covariance).min() >= 1.0 - 1e-9


def test_generate_truth_reproducible(three_layer: FactorTree) -> None:
    """Tests identical seeds giving identical truths."""
    first = generate_truth(TruthSpec(three_layer, seed=8))
    second = generate_truth(TruthSpec(three_layer, seed=8))
    np.testing.assert_array_equal(first.loadings, second.loadings)


def test_truth_spec_rejects_invalid_tree() -> None:
    """Tests an invalid truth tree being rejected."""
    with pytest.raises(InputError):
        TruthSpec(FactorTree.from_variable_sets(9, [range(1, 10), (1, 2), range(3, 10)]))


def test_sample_covariance_oracle(three_layer_truth) -> None:
    """Tests the oracle mode returning the population covariance."""
    sample = sample_covariance(
        three_layer_truth.covariance, 500, np.random.default_rng(0), oracle=True
    )
    np.testing.assert_array_equal(sample.matrix, three_layer_truth.covariance)
    with pytest.raises(InputError):
        sample_covariance(three_layer_truth.covariance, 16, np.random.default_rng(0))


def test_sample_covariance_unbiased() -> None:
    """Tests the average sample covariance approaching the population one."""
    rng = np.random.default_rng(12)
    sigma = np.eye(6) + 0.4
    draws = np.stack(
        [sample_covariance(sigma, 500, rng).matrix for _ in range(200)]
    )
    error = np.abs(draws.mean(axis=0) - sigma)
    standard_error = draws.std(axis=0) / math.sqrt(200)
    assert np.all(error <= 4 * standard_error + 1e-12)


def test_frobenius_rate(three_layer_truth) -> None:
    """Tests the root-N decay of the sampling error."""
    means, slope = frobenius_rate(
        three_layer_truth.covariance, (500, 2000, 8000), 50, np.random.default_rng(4)
    )
    assert list(means) == [500, 2000, 8000]
    assert means[500] > means[2000] > means[8000]
    assert -0.65 <= slope <= -0.35


def test_score_exact_match(three_layer: FactorTree, three_layer_truth) -> None:
    """Tests a fit equal to the truth up to column signs."""
    loadings = three_layer_truth.loadings.copy()
    loadings[:, [1, 4]] *= -1
    score = score_recovery(
        three_layer, loadings, three_layer_truth.unique_variances, three_layer, three_layer_truth
    )
    assert score.emc == 1
    assert score.lmc == (1, 1, 1)
    assert score.mse_lambda == 0.0
    assert score.mse_psi == 0.0
    assert score.layer_sizes == (1, 3, 2)


def test_score_wrong_factor_count(three_layer: FactorTree, three_layer_truth) -> None:
    """Tests a fit with fewer factors scoring no exact match and no errors."""
    fitted = FactorTree.from_variable_sets(
        16, [range(1, 17), range(1, 9), range(9, 13), range(13, 17)]
    )
    score = score_recovery(
        fitted,
        three_layer_truth.loadings[:, :4],
        three_layer_truth.unique_variances,
        three_layer,
        three_layer_truth,
    )
    assert score.emc == 0
    assert score.lmc == (1, 1, 0)
    assert score.mse_lambda is None and score.mse_psi is None


def test_signed_mse_sign_invariance(three_layer_truth, rng: np.random.Generator) -> None:
    """Tests the loading error ignoring every combination of column flips."""
    estimate = three_layer_truth.loadings + rng.normal(scale=0.01, size=(16, 6))
    reference = signed_mse(estimate, three_layer_truth.loadings)
    for flips in itertools.product((1.0, -1.0), repeat=6):
        flipped = estimate * np.asarray(flips)
        assert signed_mse(flipped, three_layer_truth.loadings) == pytest.approx(reference)
        assert signed_mse(three_layer_truth.loadings * np.asarray(flips), estimate) == (
            pytest.approx(reference)
        )


def test_exact_match_implies_layer_match(three_layer: FactorTree, rng) -> None:
    """Tests that every exact match is also a match in every layer."""
    candidates = [
        three_layer,
        FactorTree.from_variable_sets(16, [range(1, 17), range(1, 9), range(9, 17)]),
        FactorTree.from_variable_sets(
            16, [range(1, 17), range(1, 9), range(9, 13), range(13, 17)]
        ),
    ]
    for _ in range(30):
        truth = generate_truth(TruthSpec(three_layer), rng)
        fitted = candidates[int(rng.integers(len(candidates)))]
        score = score_recovery(
            fitted,
            np.zeros((16, fitted.num_factors)),
            truth.unique_variances,
            three_layer,
            truth,
        )
        if score.emc:
            assert all(score.lmc)


def test_replication_seed_is_stable() -> None:
    """Tests the documented seed-splitting rule."""
    first = replication_seed(3, 1, 2).generate_state(2)
    second = np.random.SeedSequence([3, 1, 2]).generate_state(2)
    np.testing.assert_array_equal(first, second)


def test_reference_tree() -> None:
    """Tests the benchmark tree shapes."""
    assert reference_tree("four-layer", 54).num_variables == 54
    assert reference_tree("three-layer", 16).num_factors == 6
    with pytest.raises(InputError):
        reference_tree("three-layer", 18)
    with pytest.raises(InputError):
        reference_tree("five-layer", 36)


def test_summarize() -> None:
    """Tests aggregating replication rows, exact matches only in the errors."""
    rows = pd.DataFrame(
        [
            {"J": 36, "N": 500, "replicate": 0, "failed": False, "K": 10, "T": 4,
             "EMC": 1, "MSE_lambda": 0.002, "MSE_psi": 0.01, "L2_size": 2, "LMC2": 1},
            {"J": 36, "N": 500, "replicate": 1, "failed": False, "K": 9, "T": 4,
             "EMC": 0, "MSE_lambda": None, "MSE_psi": None, "L2_size": 2, "LMC2": 1},
            {"J": 36, "N": 500, "replicate": 2, "failed": True, "K": None, "T": None,
             "EMC": None, "MSE_lambda": None, "MSE_psi": None, "L2_size": None,
             "LMC2": None},
        ]
    )
    summary = summarize(rows)
    row = summary.iloc[0]
    assert row["reps"] == 3
    assert row["failures"] == 1
    assert row["K_mean"] == pytest.approx(9.5)
    assert row["EMC"] == pytest.approx(0.5)
    assert row["MSE_lambda"] == pytest.approx(0.002)
    assert row["L2_size_mean"] == pytest.approx(2.0)
    assert row["LMC2"] == pytest.approx(1.0)


def test_run_benchmark_validation() -> None:
    """Tests invalid benchmark grids being rejected."""
    with pytest.raises(InputError):
        run_benchmark([(36, 30)], reps=1)
    with pytest.raises(InputError):
        run_benchmark([(36, 500)], reps=0)
    with pytest.raises(InputError):
        run_benchmark([(36, 500)], reps=1, truth_mode="sometimes")


@pytest.mark.slow
def test_run_benchmark_oracle() -> None:
    """Tests an oracle replication of the three-layer tree and its determinism."""
    config = ICBConfig(alm=ALMConfig(num_starts=6, min_valid_solutions=3, max_restarts=1))
    seen = []
    first = run_benchmark(
        [(16, 10_000)], 1, config, seed=5, shape="three-layer", oracle=True,
        on_replication=seen.append,
    )
    second = run_benchmark(
        [(16, 10_000)], 1, config, seed=5, shape="three-layer", oracle=True
    )
    assert len(seen) == 1
    assert first.summary.columns[0] == "J"
    pd.testing.assert_frame_equal(first.summary, second.summary)
    pd.testing.assert_frame_equal(first.replications, second.replications)


@pytest.mark.parametrize(
    "error", [ValueError("shapes do not align"), np.linalg.LinAlgError("singular matrix")]
)
def test_run_benchmark_records_numerical_failure(monkeypatch, caplog, error) -> None:
    """Tests a numerical error inside a replication becoming a failed row."""

    def _failing_fit(*args, **kwargs):
        raise error

    monkeypatch.setattr("hier_factors.simulation.fit_hierarchical", _failing_fit)
    seen = []
    with caplog.at_level(logging.WARNING, logger="hier_factors.simulation"):
        result = run_benchmark(
            [(16, 10_000)], 2, seed=5, shape="three-layer", oracle=True,
            on_replication=seen.append,
        )
    assert len(seen) == 2
    assert result.replications["failed"].all()
    assert result.replications["error"].iloc[0].startswith(type(error).__name__)
    assert result.summary.iloc[0]["failures"] == 2
    assert "failed" in caplog.text
