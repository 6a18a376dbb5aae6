"""Columnar text files: '#' header lines, whitespace-separated columns."""

from pathlib import Path

import numpy as np

from .errors import ConfigurationError


def write_columns(path, names, columns, fmt="%.12g", comments=()):
    columns = [np.asarray(c) for c in columns]
    if len(names) != len(columns):
        raise ValueError("one name per column")
    lines = [f"# {c}" for c in comments]
    lines.append("# " + "\t".join(names))
    if columns and len(columns[0]):
        fmts = [fmt] * len(columns) if isinstance(fmt, str) else list(fmt)
        for row in zip(*columns):
            lines.append("\t".join(f % v for f, v in zip(fmts, row)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_columns(path, ncols=None):
    """Return a 2-D float array, one column per field."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"{path}: no such file")
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    if ncols is not None and data.size and data.shape[1] < ncols:
        raise ConfigurationError(f"{path}: expected {ncols} columns, found {data.shape[1]}")
    return data
