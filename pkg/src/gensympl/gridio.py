"""CSV import/export of sampled fields.

Grid files hold one scalar component in row-major order: one text line per
index of the leading axes, the last axis running along the line.  The first
line is a ``#`` comment carrying JSON metadata (name, lo, hi, grid).
"""
from __future__ import annotations

import json

import numpy as np

from .errors import ValidationError
from .forms import BoxDomain


def _meta_line(meta):
    return json.dumps(meta, sort_keys=True)


def write_grid_csv(path, domain, values, name, **extra):
    values = np.asarray(values, dtype=float)
    if values.shape != tuple(domain.grid):
        raise ValidationError(f"values of shape {values.shape} do not match grid {domain.grid}")
    meta = {"name": name, **domain.to_dict(), **extra}
    rows = values.reshape(-1, domain.grid[-1])
    np.savetxt(path, rows, delimiter=",", fmt="%.17g", header=_meta_line(meta), comments="# ")


def read_grid_csv(path):
    """Returns ``(meta, domain, values)``."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.startswith("#"):
        raise ValidationError(f"{path}: missing metadata header")
    try:
        meta = json.loads(first.lstrip("#").strip())
        domain = BoxDomain(meta["lo"], meta["hi"], meta["grid"])
    except (json.JSONDecodeError, KeyError) as exc:
        raise ValidationError(f"{path}: malformed metadata header ({exc})") from exc
    rows = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if rows.size != int(np.prod(domain.grid)):
        raise ValidationError(f"{path}: {rows.size} values for grid {domain.grid}")
    return meta, domain, rows.reshape(domain.grid)


def write_table_csv(path, columns, data, **meta):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    header = _meta_line(meta) + "\n" + ",".join(columns)
    np.savetxt(path, data, delimiter=",", fmt="%.17g", header=header, comments="# ")


def read_table_csv(path):
    with open(path, encoding="utf-8") as fh:
        meta = json.loads(fh.readline().lstrip("#").strip())
        columns = fh.readline().lstrip("#").strip().split(",")
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return meta, columns, data
