"""Model classes for the hier_factors run ledger."""
import json
from typing import Any, Dict

from peewee import BooleanField, ForeignKeyField, IntegerField, Model, SqliteDatabase, TextField
from playhouse.sqlite_ext import JSONField

SQLITE_DATABASE: SqliteDatabase = SqliteDatabase(None)


def _dict_dumps(value: Dict[str, Any]) -> str:
    if value is not None and not isinstance(value, Dict):
        raise TypeError(value)
    return json.dumps(value, sort_keys=True)


class BaseModel(Model):
    """Base model class for all models."""

    class Meta:
        """Meta class for all models."""

        database = SQLITE_DATABASE


class Run(BaseModel):
    """One invocation of fit, confirm, simulate or check."""

    name = TextField(index=True)
    kind = TextField()
    seed = IntegerField()
    version = TextField()
    config = JSONField(json_dumps=_dict_dumps)

    def __lt__(self, other):
        return self.id < other.id


class Replication(BaseModel):
    """Scores of one benchmark replication."""

    run = ForeignKeyField(Run, backref="replications", on_delete="CASCADE")
    setting = TextField()
    replicate = IntegerField()
    seed = IntegerField()
    failed = BooleanField(default=False)
    error = TextField(null=True)
    scores = JSONField(json_dumps=_dict_dumps)
