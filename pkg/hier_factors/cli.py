"""Command-line interface: ``fit``, ``confirm``, ``simulate``, ``check`` and ``ledger``.

Exit codes: 0 success, 2 unusable input, 3 solver failure.
"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__
from .conditions import DEFAULT_BUDGET, DEFAULT_TOL, check_conditions
from .config import C_MAX_RULES, ALMConfig, Configuration, ICBConfig, RunConfig
from .core import FitResult, fit_confirmatory, fit_hierarchical
from .errors import (
    ConfigurationError,
    HierFactorsException,
    InputError,
    NotPositiveDefiniteError,
    SolverError,
    TreeStructureError,
)
from .helpers import DatabaseHelper, FileHelper
from .objective import DIVISORS, SampleCovariance
from .simulation import SHAPES, TRUTH_MODES, run_benchmark
from .tree import LoadingPattern, tree_from_dict, tree_from_pattern, tree_to_dict

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
LOG_FILE_NAME = "hier-factors.log"
INPUT_ERRORS = (InputError, NotPositiveDefiniteError, TreeStructureError, ConfigurationError)
RUN_KINDS = ("fit", "confirm", "simulate", "check")
LEDGER_COLUMNS = ("id", "name", "kind", "seed", "version", "replications", "failures")


def _setting(value: str) -> Tuple[int, int]:
    try:
        num_variables, num_obs = value.lower().split("x")
        return int(num_variables), int(num_obs)
    except ValueError as error:
        raise argparse.ArgumentTypeError(f"Expected JxN, got {value!r}.") from error


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master random seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument(
        "--threads",
        type=int,
        default=os.cpu_count() or 1,
        help="worker processes for multi-start and replications",
    )
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")


def _add_tuning(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dmax", type=int, default=6, help="largest child block dimension")
    parser.add_argument(
        "--cmax-rule", choices=sorted(C_MAX_RULES), default="sim", help="cap on child counts"
    )
    parser.add_argument("--starts", type=int, default=100, help="multi-start attempts per round")
    parser.add_argument("--restarts", type=int, default=5, help="extra multi-start rounds")
    parser.add_argument(
        "--quorum", type=int, default=None, help="converged solutions wanted (default starts/2)"
    )
    parser.add_argument("--max-iter", type=int, default=100, help="outer ALM iterations")


def _add_input(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", required=True, help="covariance or data file")
    parser.add_argument("--kind", choices=("covariance", "data"), default="covariance")
    parser.add_argument("--n", type=int, default=None, help="sample size of a covariance input")
    parser.add_argument("--ridge", type=float, default=0.0, help="diagonal ridge epsilon")
    parser.add_argument("--divisor", choices=DIVISORS, default="n")
    parser.add_argument(
        "--center",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="center raw data columns",
    )


def build_parser() -> argparse.ArgumentParser:
    """Argument parser for all subcommands."""
    parser = argparse.ArgumentParser(
        prog="hier-factors", description="Learn hierarchical factor structures."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="mode", required=True)

    fit = commands.add_parser("fit", help="learn a factor tree from data")
    _add_input(fit)
    _add_tuning(fit)
    _add_common(fit)

    confirm = commands.add_parser("confirm", help="refit a given factor tree")
    _add_input(confirm)
    confirm.add_argument("--tree", required=True, help="tree JSON file")
    _add_tuning(confirm)
    _add_common(confirm)

    simulate = commands.add_parser("simulate", help="run the recovery benchmark")
    simulate.add_argument(
        "--settings",
        type=_setting,
        action="append",
        default=None,
        help="JxN setting, repeatable (default 36x500 36x2000)",
    )
    simulate.add_argument("--reps", type=int, default=5)
    simulate.add_argument("--shape", choices=SHAPES, default="four-layer")
    simulate.add_argument("--truth-mode", choices=TRUTH_MODES, default="fixed")
    simulate.add_argument("--oracle", action="store_true", help="use the true covariance")
    simulate.add_argument("--divisor", choices=DIVISORS, default="n")
    simulate.add_argument(
        "--center", action=argparse.BooleanOptionalAction, default=False
    )
    _add_tuning(simulate)
    _add_common(simulate)

    check = commands.add_parser("check", help="check a true loading matrix")
    check.add_argument("--loadings", required=True, help="loading matrix file")
    check.add_argument("--tree", default=None, help="tree JSON file (default: from support)")
    check.add_argument("--tol", type=float, default=DEFAULT_TOL)
    check.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    check.add_argument("--tau", type=float, default=None, help="loading bound to check")
    _add_tuning(check)
    _add_common(check)

    ledger = commands.add_parser("ledger", help="list the runs recorded in the output directory")
    ledger.add_argument("--kind", choices=RUN_KINDS, default=None, help="only runs of this kind")
    ledger.add_argument("--out", default=None, help="output directory")
    ledger.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    return parser


def _icb_config(args: argparse.Namespace) -> ICBConfig:
    quorum = args.quorum
    if quorum is None:
        quorum = max(1, args.starts // 2)
    alm = ALMConfig(
        num_starts=args.starts,
        max_restarts=args.restarts,
        min_valid_solutions=quorum,
        max_iterations=args.max_iter,
    )
    return ICBConfig(c_max_rule=args.cmax_rule, d_max=args.dmax, alm=alm)


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    """Validated :class:`RunConfig` from parsed arguments."""
    settings = tuple(args.settings or ()) if args.mode == "simulate" else ()
    if args.mode == "simulate" and not settings:
        settings = ((36, 500), (36, 2000))
    return RunConfig(
        mode=args.mode,
        seed=args.seed,
        input_path=getattr(args, "input", None),
        input_kind=getattr(args, "kind", "covariance"),
        n_obs=getattr(args, "n", None),
        tree_path=getattr(args, "tree", None),
        loadings_path=getattr(args, "loadings", None),
        output_dir=args.out,
        ridge=getattr(args, "ridge", 0.0),
        n_jobs=args.threads,
        divisor=getattr(args, "divisor", "n"),
        center=getattr(args, "center", True),
        settings=settings,
        reps=getattr(args, "reps", 5),
        shape=getattr(args, "shape", "four-layer"),
        truth_mode=getattr(args, "truth_mode", "fixed"),
        oracle=getattr(args, "oracle", False),
        icb=_icb_config(args),
    )


def load_sample(run_config: RunConfig) -> SampleCovariance:
    """Sample covariance from the configured input file."""
    values = FileHelper.read_matrix(run_config.input_path)
    if run_config.input_kind == "data":
        return SampleCovariance.from_data(
            values, run_config.center, run_config.divisor, run_config.ridge
        )
    return SampleCovariance.from_matrix(values, run_config.n_obs, run_config.ridge)


def _labelled(matrix: np.ndarray, labels: Sequence[int]) -> pd.DataFrame:
    frame = pd.DataFrame(matrix, columns=[f"F{label}" for label in labels])
    frame.insert(0, "variable", np.arange(1, matrix.shape[0] + 1))
    return frame


def _write_fit(
    files: FileHelper, name: str, fit: FitResult, meta: Dict[str, Any]
) -> Path:
    directory = files.bundle_directory(name)
    files.write_json(directory / "tree.json", tree_to_dict(fit.tree), meta)
    files.write_table(directory / "loadings.csv", _labelled(fit.loadings, fit.tree.labels), meta)
    unique = pd.DataFrame(
        {
            "variable": np.arange(1, fit.unique_variances.size + 1),
            "unique_variance": fit.unique_variances,
        }
    )
    files.write_table(directory / "unique_variances.csv", unique, meta)
    files.write_json(directory / "diagnostics.json", fit.to_dict(), meta)
    return directory


def cmd_fit(run_config: RunConfig, files: FileHelper) -> Path:
    """Learn a tree and write the fit bundle."""
    sample = load_sample(run_config)
    meta = files.meta(run_config.seed, run_config.to_dict())
    try:
        fit = fit_hierarchical(sample, run_config.icb, run_config.seed, run_config.n_jobs)
    except SolverError as error:
        directory = files.bundle_directory("fit")
        files.write_json(
            directory / "diagnostics.json",
            {"error": str(error), "partial": error.partial},
            meta,
        )
        raise
    if not fit.converged:
        LOGGER.warning("Returning a refit that did not converge.")
    return _write_fit(files, "fit", fit, meta)


def cmd_confirm(run_config: RunConfig, files: FileHelper) -> Path:
    """Refit a given tree and write the fit bundle."""
    sample = load_sample(run_config)
    tree = tree_from_dict(files.read_json(run_config.tree_path))
    fit = fit_confirmatory(sample, tree, run_config.icb, run_config.seed)
    if not fit.converged:
        LOGGER.warning("Returning a refit that did not converge.")
    meta = files.meta(run_config.seed, run_config.to_dict())
    return _write_fit(files, "confirm", fit, meta)


def cmd_simulate(run_config: RunConfig, files: FileHelper, run=None) -> Path:
    """Run the benchmark grid and write summary tables."""
    result = run_benchmark(
        run_config.settings,
        run_config.reps,
        run_config.icb,
        run_config.seed,
        run_config.shape,
        run_config.truth_mode,
        run_config.oracle,
        run_config.divisor,
        run_config.center,
        run_config.n_jobs,
        on_replication=(lambda row: DatabaseHelper.add_replication(run, row)) if run else None,
    )
    meta = files.meta(run_config.seed, run_config.to_dict())
    directory = files.bundle_directory("simulate")
    files.write_table(directory / "summary.csv", result.summary, meta)
    files.write_table(directory / "replications.csv", result.replications, meta)
    files.write_json(
        directory / "summary.json",
        {
            "summary": files.records(result.summary),
            "replications": files.records(result.replications),
        },
        meta,
    )
    return directory


def cmd_check(
    run_config: RunConfig, files: FileHelper, tol: float, budget: int, tau: Optional[float]
) -> Tuple[Path, bool]:
    """Check a loading matrix against its tree and write the report."""
    loadings = files.read_matrix(run_config.loadings_path)
    if run_config.tree_path:
        tree = tree_from_dict(files.read_json(run_config.tree_path))
    else:
        tree = tree_from_pattern(LoadingPattern(loadings != 0))
    report = check_conditions(loadings, tree, tol, budget, tau, run_config.icb)
    meta = files.meta(run_config.seed, run_config.to_dict())
    directory = files.bundle_directory("check")
    files.write_json(directory / "conditions.json", report.to_dict(), meta)
    files.write_text(directory / "conditions.txt", report.to_text(), meta)
    return directory, report.passed


def cmd_ledger(kind: Optional[str] = None) -> pd.DataFrame:
    """Recorded runs, oldest first, with their replication counts."""
    rows = []
    for run in DatabaseHelper.get_runs(kind):
        replications = DatabaseHelper.get_replications(run)
        rows.append(
            {
                "id": run.id,
                "name": run.name,
                "kind": run.kind,
                "seed": run.seed,
                "version": run.version,
                "replications": len(replications),
                "failures": sum(replication.failed for replication in replications),
            }
        )
    return pd.DataFrame(rows, columns=list(LEDGER_COLUMNS))


def configure_logging(verbose: bool, config: Configuration) -> None:
    """Stream handler plus a file handler in the log directory."""
    level = logging.DEBUG if verbose else logging.INFO
    formatter = logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    config.dir_logs.mkdir(parents=True, exist_ok=True)
    handlers.append(logging.FileHandler(config.dir_logs / LOG_FILE_NAME, encoding="utf-8"))
    root = logging.getLogger("hier_factors")
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    for handler in handlers:
        handler.setFormatter(formatter)
        root.addHandler(handler)
    root.setLevel(level)


def main(argv: Optional[Sequence[str]] = None, config: Configuration = None) -> int:
    """Entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    if config is None:
        config = Configuration()
    configure_logging(args.verbose, config)
    if args.mode == "ledger":
        files = FileHelper(args.out, config)
        DatabaseHelper.init_db(files.ledger_path)
        runs = cmd_ledger(args.kind)
        print(runs.to_string(index=False) if len(runs) else "no runs recorded")
        return EXIT_OK
    try:
        run_config = run_config_from_args(args)
        files = FileHelper(run_config.output_dir, config)
        DatabaseHelper.init_db(files.ledger_path)
        name = f"{run_config.mode}-{run_config.seed}"
        if DatabaseHelper.run_exists(name):
            LOGGER.info("Run %s was recorded before; adding another ledger entry.", name)
        run = DatabaseHelper.create_run(
            name, run_config.mode, run_config.seed, run_config.to_dict()
        )
        if run_config.mode == "fit":
            directory = cmd_fit(run_config, files)
        elif run_config.mode == "confirm":
            directory = cmd_confirm(run_config, files)
        elif run_config.mode == "simulate":
            directory = cmd_simulate(run_config, files, run)
        else:
            directory, passed = cmd_check(run_config, files, args.tol, args.budget, args.tau)
            print("all conditions hold" if passed else "some conditions fail or are inconclusive")
    except INPUT_ERRORS as error:
        LOGGER.error("%s", error)
        print(f"error: {error}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as error:
        LOGGER.error("Solver failure: %s", error)
        print(f"solver failure: {error}", file=sys.stderr)
        return EXIT_SOLVER
    except HierFactorsException as error:
        LOGGER.error("%s", error)
        print(f"error: {error}", file=sys.stderr)
        return EXIT_INPUT
    print(directory)
    return EXIT_OK


def run() -> None:
    """Console script entry point."""
    sys.exit(main())
