"""Helper classes for hier_factors."""
import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, TextIO

import numpy as np
import pandas as pd
from slugify import slugify

from . import __version__
from .config import Configuration
from .errors import InputError
from .model import SQLITE_DATABASE, Replication, Run

TOOL_NAME = "hier-factors"


class DatabaseHelper:
    """Helper class for ledger operations."""

    @staticmethod
    def init_db(database_name: str) -> None:
        """Initializes the ledger database."""
        SQLITE_DATABASE.init(str(database_name))
        SQLITE_DATABASE.create_tables([Run, Replication])

    @staticmethod
    def create_run(name: str, kind: str, seed: int, config: Dict[str, Any]) -> Run:
        """Records one invocation."""
        return Run.create(
            name=name, kind=kind, seed=seed, version=__version__, config=config
        )

    @staticmethod
    def add_replication(run: Run, row: Dict[str, Any]) -> Replication:
        """Records one benchmark replication row."""
        scores = {
            key: _plain(value)
            for key, value in row.items()
            if key not in ("replicate", "seed", "failed", "error")
        }
        return Replication.create(
            run=run,
            setting=f"J={row['J']},N={row['N']}",
            replicate=int(row["replicate"]),
            seed=int(row["seed"]),
            failed=bool(row["failed"]),
            error=row.get("error") or None,
            scores=scores,
        )

    @staticmethod
    def get_replications(run: Run) -> List[Replication]:
        """Returns the replications of a run in recorded order."""
        return list(
            Replication.select().where(Replication.run == run).order_by(Replication.id)
        )

    @staticmethod
    def get_runs(kind: str = None) -> List[Run]:
        """Returns all runs, optionally of one kind."""
        query = Run.select().order_by(Run.id)
        if kind is not None:
            query = query.where(Run.kind == kind)
        return list(query)

    @staticmethod
    def run_exists(name: str) -> bool:
        """Checks if a run with the given name exists."""
        return Run.select().where(Run.name == name).count() > 0


def _plain(value: Any) -> Any:
    """Numpy scalars and NaN to JSON-safe Python values."""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


class FileHelper:
    """Helper class for file operations."""

    def __init__(self, output_dir_name: str = None, config: Configuration = None) -> None:
        if config is None:
            config = Configuration()
        if output_dir_name is None:
            self.dir_output = config.dir_output
        else:
            self.dir_output = Path(output_dir_name)
        self.ledger_path = self.dir_output / config.ledger_name
        self.dir_output.mkdir(parents=True, exist_ok=True)

    def bundle_directory(self, label: str) -> Path:
        """Creates and returns the bundle directory for ``label``."""
        directory = self.dir_output / slugify(label)
        directory.mkdir(parents=True, exist_ok=True)
        return directory

    @staticmethod
    def meta(seed: Optional[int], config: Dict[str, Any]) -> Dict[str, Any]:
        """The reproducibility record embedded in every output file."""
        return {"tool": TOOL_NAME, "version": __version__, "seed": seed, "config": config}

    @staticmethod
    def read_matrix(path: str) -> np.ndarray:
        """Reads a numeric delimiter-separated table; a non-numeric first row is a header."""
        try:
            frame = pd.read_csv(
                path, sep=None, engine="python", header=None, comment="#", dtype=str
            )
        except (OSError, csv.Error, pd.errors.ParserError, pd.errors.EmptyDataError) as error:
            raise InputError(f"Cannot read {path}: {error}") from error
        first = pd.to_numeric(frame.iloc[0].str.strip(), errors="coerce")
        if first.isna().any():
            frame = frame.iloc[1:]
        values = frame.apply(lambda column: pd.to_numeric(column.str.strip(), errors="coerce"))
        if values.isna().to_numpy().any() or values.empty:
            raise InputError(f"{path} holds non-numeric or missing entries.")
        return values.to_numpy(dtype=float)

    @staticmethod
    def read_json(path: str) -> Dict[str, Any]:
        """Reads a JSON document."""
        try:
            with open(path, encoding="utf-8") as handle:
                return json.load(handle)
        except (OSError, json.JSONDecodeError) as error:
            raise InputError(f"Cannot read {path}: {error}") from error

    @staticmethod
    def write_json(path: Path, payload: Dict[str, Any], meta: Dict[str, Any]) -> Path:
        """Writes ``payload`` with a leading ``meta`` record."""
        document = {"meta": meta, **payload}
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(document, handle, indent=2, sort_keys=False, default=_json_default)
            handle.write("\n")
        return path

    @staticmethod
    def write_table(path: Path, frame: pd.DataFrame, meta: Dict[str, Any]) -> Path:
        """Writes ``frame`` as CSV preceded by ``# key: value`` lines."""
        with open(path, "w", encoding="utf-8", newline="") as handle:
            _write_meta(handle, meta)
            frame.to_csv(handle, index=False, float_format="%.10g")
        return path

    @staticmethod
    def records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
        """Rows of ``frame`` as JSON-safe dicts; missing values become ``None``."""
        return [
            {key: _plain(value) for key, value in row.items()}
            for row in frame.to_dict(orient="records")
        ]

    @staticmethod
    def write_text(path: Path, text: str, meta: Optional[Dict[str, Any]] = None) -> Path:
        """Writes plain text, preceded by ``# key: value`` lines when ``meta`` is given."""
        with open(path, "w", encoding="utf-8") as handle:
            if meta is not None:
                _write_meta(handle, meta)
            handle.write(text)
        return path


def _write_meta(handle: TextIO, meta: Dict[str, Any]) -> None:
    for key, value in meta.items():
        if isinstance(value, dict):
            value = json.dumps(value, sort_keys=True, default=_json_default)
        handle.write(f"# {key}: {value}\n")


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (tuple, set)):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
