"""Test cases for the __cli__ module."""
import json
import logging

import numpy as np
import pytest

from hier_factors.cli import (
    EXIT_INPUT,
    EXIT_OK,
    LEDGER_COLUMNS,
    build_parser,
    main,
    run_config_from_args,
)
from hier_factors.config import Configuration
from hier_factors.helpers import DatabaseHelper
from hier_factors.tree import tree_to_dict


@pytest.fixture(name="loadings_file")
def _loadings_file(tmpdir, two_block_truth) -> str:
    """Returns a CSV file holding the two-block true loadings."""
    path = tmpdir / "loadings.csv"
    np.savetxt(str(path), two_block_truth.loadings, delimiter=",")
    return str(path)


@pytest.fixture(name="tree_file")
def _tree_file(tmpdir, two_block) -> str:
    """Returns a JSON file holding the two-block tree."""
    path = tmpdir / "tree.json"
    path.write(json.dumps(tree_to_dict(two_block)))
    return str(path)


@pytest.fixture(name="covariance_file")
def _covariance_file(tmpdir, three_layer_truth) -> str:
    """Returns a CSV file holding the exact three-layer covariance."""
    path = tmpdir / "covariance.csv"
    np.savetxt(str(path), three_layer_truth.covariance, delimiter=",")
    return str(path)


def test_parser_defaults() -> None:
    """Tests the default tuning values and the quorum rule."""
    args = build_parser().parse_args(["simulate"])
    run_config = run_config_from_args(args)
    assert run_config.settings == ((36, 500), (36, 2000))
    assert run_config.reps == 5
    assert run_config.icb.d_max == 6
    assert run_config.icb.alm.num_starts == 100
    assert run_config.icb.alm.min_valid_solutions == 50
    assert not run_config.center


def test_parser_rejects_bad_setting() -> None:
    """Tests a malformed JxN setting stopping the parser."""
    with pytest.raises(SystemExit):
        build_parser().parse_args(["simulate", "--settings", "36by500"])


def test_check_with_tree(
    capsys, config: Configuration, loadings_file: str, tree_file: str
) -> None:
    """Tests checking true loadings against their tree."""
    code = main(
        ["check", "--loadings", loadings_file, "--tree", tree_file, "--threads", "1"], config
    )
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "all conditions hold" in out
    directory = config.dir_output / "check"
    document = json.loads((directory / "conditions.json").read_text(encoding="utf-8"))
    assert document["passed"]
    assert document["meta"]["tool"] == "hier-factors"
    report = (directory / "conditions.txt").read_text(encoding="utf-8").splitlines()
    assert report[0] == "# tool: hier-factors"
    assert report[2] == "# seed: 0"
    assert any("passed" in line for line in report[4:])


def test_check_tree_from_support(capsys, config: Configuration, loadings_file: str) -> None:
    """Tests deriving the tree from the loading support."""
    code = main(["check", "--loadings", loadings_file, "--threads", "1"], config)
    assert code == EXIT_OK
    assert "all conditions hold" in capsys.readouterr().out


def test_ledger_lists_runs(
    caplog, capsys, config: Configuration, loadings_file: str, tree_file: str
) -> None:
    """Tests listing recorded runs and their replication counts."""
    argv = ["check", "--loadings", loadings_file, "--tree", tree_file, "--threads", "1"]
    assert main(argv, config) == EXIT_OK
    with caplog.at_level(logging.INFO, logger="hier_factors.cli"):
        assert main(argv, config) == EXIT_OK
    assert "check-0 was recorded before" in caplog.text
    run = DatabaseHelper.create_run("simulate-5", "simulate", 5, {"reps": 2})
    for replicate, failed in enumerate((False, True)):
        DatabaseHelper.add_replication(
            run,
            {"J": 16, "N": 500, "replicate": replicate, "seed": replicate, "failed": failed,
             "error": "SolverError: no split" if failed else "", "EMC": 1},
        )
    capsys.readouterr()

    assert main(["ledger"], config) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == list(LEDGER_COLUMNS)
    rows = [line.split() for line in lines[1:]]
    assert [row[1] for row in rows] == ["check-0", "check-0", "simulate-5"]
    assert rows[2][5:] == ["2", "1"]
    assert len(DatabaseHelper.get_runs()) == 3

    assert main(["ledger", "--kind", "confirm"], config) == EXIT_OK
    assert capsys.readouterr().out.strip() == "no runs recorded"


def test_check_pattern_mismatch(
    tmpdir, capsys, config: Configuration, two_block_truth, tree_file: str
) -> None:
    """Tests an off-pattern loading giving the input exit code."""
    loadings = two_block_truth.loadings.copy()
    loadings[0, 2] = 0.7
    path = tmpdir / "bad_loadings.csv"
    np.savetxt(str(path), loadings, delimiter=",")
    code = main(
        ["check", "--loadings", str(path), "--tree", tree_file, "--threads", "1"], config
    )
    assert code == EXIT_INPUT
    assert "error" in capsys.readouterr().err


def test_fit_requires_sample_size(
    capsys, config: Configuration, covariance_file: str
) -> None:
    """Tests a covariance input without --n being rejected."""
    code = main(["fit", "--input", covariance_file, "--threads", "1"], config)
    assert code == EXIT_INPUT
    assert "--n" in capsys.readouterr().err


def test_fit_singular_covariance(tmpdir, config: Configuration) -> None:
    """Tests a singular covariance giving the input exit code."""
    path = tmpdir / "singular.csv"
    np.savetxt(str(path), np.ones((4, 4)), delimiter=",")
    code = main(["fit", "--input", str(path), "--n", "100", "--threads", "1"], config)
    assert code == EXIT_INPUT


def test_fit_unreadable_input(tmpdir, config: Configuration) -> None:
    """Tests a text file giving the input exit code."""
    path = tmpdir / "notes.txt"
    path.write("alpha,beta\ngamma,delta\n")
    code = main(["fit", "--input", str(path), "--n", "100", "--threads", "1"], config)
    assert code == EXIT_INPUT


def test_confirm_writes_bundle(
    tmpdir, capsys, config: Configuration, three_layer, covariance_file: str
) -> None:
    """Tests refitting the true tree and the files it writes."""
    tree_path = tmpdir / "three_layer.json"
    tree_path.write(json.dumps(tree_to_dict(three_layer)))
    code = main(
        [
            "confirm",
            "--input",
            covariance_file,
            "--n",
            "10000",
            "--tree",
            str(tree_path),
            "--seed",
            "3",
            "--threads",
            "1",
        ],
        config,
    )
    assert code == EXIT_OK
    directory = config.dir_output / "confirm"
    assert str(directory) in capsys.readouterr().out
    for name in ("tree.json", "loadings.csv", "unique_variances.csv", "diagnostics.json"):
        assert (directory / name).is_file()
    diagnostics = json.loads((directory / "diagnostics.json").read_text(encoding="utf-8"))
    assert diagnostics["meta"]["seed"] == 3
    assert diagnostics["layers"] == [[1], [2, 3, 4], [5, 6]]
    header = (directory / "loadings.csv").read_text(encoding="utf-8").splitlines()
    assert header[0] == "# tool: hier-factors"
    assert header[4].startswith("variable,F1,F2")

    runs = DatabaseHelper.get_runs("confirm")
    assert [run.name for run in runs] == ["confirm-3"]


@pytest.mark.slow
def test_simulate_is_reproducible(tmpdir) -> None:
    """Tests two identical benchmark invocations writing identical summaries."""
    argv = [
        "simulate",
        "--settings",
        "16x10000",
        "--reps",
        "1",
        "--shape",
        "three-layer",
        "--oracle",
        "--starts",
        "6",
        "--quorum",
        "3",
        "--restarts",
        "1",
        "--seed",
        "5",
        "--threads",
        "1",
    ]
    summaries = []
    for name in ("first", "second"):
        config = Configuration(dir_output=tmpdir / name, dir_logs=tmpdir / "logs")
        assert main(argv, config) == EXIT_OK
        summaries.append((tmpdir / name / "simulate" / "summary.csv").read_binary())
        run = DatabaseHelper.get_runs("simulate")[0]
        assert len(DatabaseHelper.get_replications(run)) == 1
    assert summaries[0] == summaries[1]
