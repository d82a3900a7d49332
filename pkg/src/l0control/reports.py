"""Deterministic JSON reports and CSV tables."""

import csv
import json
import math
from importlib import metadata

import numpy as np

TOOL_NAME = "l0control"


def tool_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values.

    Non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``;
    arrays become lists.
    """
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def dumps(report):
    return json.dumps(jsonable(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(path, command, spec, body, seed=None):
    """Write a self-describing report: tool, command, seed, problem echo, body."""
    report = {
        "tool": {"name": TOOL_NAME, "version": tool_version()},
        "command": command,
        "seed": seed,
        "problem": spec.echo() if spec is not None else None,
        "results": body,
    }
    text = dumps(report)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return text


def write_table(path, rows, columns=None):
    """Write a list of dicts as CSV; missing cells are left empty."""
    if columns is None:
        columns = []
        for row in rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
    return columns


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    return str(value)
