"""Comma-separated tables with a one-line header, written atomically."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

DENSE_MAX = 64


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def atomic_write_text(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path: Path, header: list[str], rows) -> Path:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")
    return Path(path)


def read_table(path: Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size and data.shape[1] != len(header):
        raise ValueError(f"{path}: rows have {data.shape[1]} columns, header has {len(header)}")
    return header, data


def write_json(path: Path, obj) -> Path:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return Path(path)


def write_matrix(path: Path, m: np.ndarray) -> Path:
    """Complex matrix: dense ``row,re_*,im_*`` up to 64 columns, long-form above."""
    m = np.asarray(m, dtype=complex)
    n = m.shape[1]
    if n <= DENSE_MAX:
        header = ["row"] + [f"re_{c}" for c in range(n)] + [f"im_{c}" for c in range(n)]
        rows = ([r, *m[r].real, *m[r].imag] for r in range(m.shape[0]))
    else:
        header = ["row", "col", "real", "imag"]
        rows = ([r, c, m[r, c].real, m[r, c].imag]
                for r in range(m.shape[0]) for c in range(n))
    return write_table(path, header, rows)


def read_matrix(path: Path) -> np.ndarray:
    header, data = read_table(path)
    if header[:4] == ["row", "col", "real", "imag"] and len(header) == 4:
        rows = data[:, 0].astype(int)
        cols = data[:, 1].astype(int)
        m = np.zeros((rows.max() + 1, cols.max() + 1), dtype=complex)
        m[rows, cols] = data[:, 2] + 1j * data[:, 3]
        return m
    if header[0] != "row" or (len(header) - 1) % 2:
        raise ValueError(f"{path}: not a matrix table")
    n = (len(header) - 1) // 2
    order = np.argsort(data[:, 0])
    data = data[order]
    return data[:, 1:n + 1] + 1j * data[:, n + 1:]
