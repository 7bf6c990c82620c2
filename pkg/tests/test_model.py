"""Test cases for the __model__ module."""
import pytest

from hier_factors.helpers import DatabaseHelper
from hier_factors.model import Replication, Run


@pytest.fixture(name="ledger")
def _ledger(tmpdir) -> str:
    """Returns an initialized ledger path."""
    path = str(tmpdir / "ledger.db")
    DatabaseHelper.init_db(path)
    return path


def test_run_lt(ledger) -> None:
    """Tests __lt__ method of Run model."""
    run_1 = DatabaseHelper.create_run("fit-0", "fit", 0, {})
    run_2 = DatabaseHelper.create_run("fit-1", "fit", 1, {})
    assert run_1 < run_2


def test_run_config_dumps(ledger) -> None:
    """Tests the config field not accepting non-dictionary objects."""
    run = Run(name="foo", kind="fit", seed=0, version="0")
    with pytest.raises(TypeError):
        run.config = 3
        run.save()


def test_replication_scores_dumps(ledger) -> None:
    """Tests the scores field not accepting non-dictionary objects."""
    run = DatabaseHelper.create_run("simulate-0", "simulate", 0, {"reps": 1})
    with pytest.raises(TypeError):
        Replication.create(run=run, setting="J=36,N=500", replicate=0, seed=1, scores=[1])
