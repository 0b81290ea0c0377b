"""Atomic file output, CSV files and run manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile

import numpy as np

from .control import ControlGrid


def atomic_write(path, text: str):
    """Write ``text`` to a temporary file beside ``path`` and rename it into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_csv(path, header, rows):
    atomic_write(path, csv_text(header, rows))


def fmt(x) -> str:
    return repr(float(x))


def solution_rows(grid: ControlGrid, extra: dict):
    """Piece rows followed by a keyed block in the same column layout."""
    n_u = grid.n_u
    header = ["piece_index", "t_start", "t_end"] + [f"u_{l + 1}" for l in range(n_u)]
    rows = []
    for k in range(grid.n):
        rows.append([k + 1, fmt(grid.breakpoints[k]), fmt(grid.breakpoints[k + 1])]
                    + [fmt(u) for u in grid.values[k]])
    pad = [""] * (len(header) - 2)
    for key, value in extra.items():
        rows.append([key, value if isinstance(value, str) else fmt(value)] + pad)
    return header, rows


def read_solution(path):
    """Return ``(values (n, n_u), keyed dict)`` from a solution or control CSV.

    A plain CSV with one row of control values per piece (optional header) is
    accepted as well.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path} is empty")
    keyed = {}
    values = []
    if rows[0][0].strip() == "piece_index":
        ucols = [i for i, name in enumerate(rows[0]) if name.startswith("u_")]
        for r in rows[1:]:
            if r[0].strip().isdigit():
                values.append([float(r[i]) for i in ucols])
            else:
                keyed[r[0].strip()] = r[1].strip()
    else:
        for r in rows:
            try:
                values.append([float(c) for c in r if c.strip()])
            except ValueError:
                if values:
                    raise
                continue  # header line
    if not values:
        raise ValueError(f"{path} holds no control values")
    return np.asarray(values, dtype=float), keyed


def file_digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(out_dir, command, config_hash, seed, version, files):
    manifest = {
        "command": command,
        "config_sha256": config_hash,
        "seed": seed,
        "version": version,
        "outputs": {os.path.basename(f): file_digest(f) for f in sorted(files)},
    }
    path = os.path.join(out_dir, "manifest.json")
    atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
