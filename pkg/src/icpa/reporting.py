"""Run-report serialization: canonical, byte-stable JSON plus schema checks."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and tuples to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(jsonable(report), sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_report(report: dict, path) -> None:
    Path(path).write_text(dumps_report(report), encoding="utf-8", newline="\n")


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def schema_path() -> Path:
    return Path(__file__).with_name("report.schema.json")


def validate_report(report: dict) -> None:
    """Raise jsonschema.ValidationError when the report violates the schema."""
    import jsonschema

    with open(schema_path(), encoding="utf-8") as fh:
        schema = json.load(fh)
    jsonschema.validate(jsonable(report), schema)
