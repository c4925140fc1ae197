"""CSV/JSON persistence with a run envelope.

CSV files start with ``#``-prefixed envelope lines followed by a header row.
Floats are written with 17 significant digits so they round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .measures import BinnedMeasure, FieldProfile


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, columns, rows, envelope: dict | None = None) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        if envelope:
            for key in ("tool", "tool_version", "schema", "config_hash", "workers"):
                if key in envelope:
                    fh.write(f"# {key}: {envelope[key]}\n")
            for note in envelope.get("warnings", []):
                fh.write(f"# warning: {note}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_default) + "\n")
    return path


def read_csv(path) -> tuple[list, list]:
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader if row]


def read_measure_csv(path, even: bool = True) -> BinnedMeasure:
    """Load a measure table (``bin_lo, bin_hi, mass_mean, ...``) written by the sigma command."""
    header, rows = read_csv(path)
    col = {name: i for i, name in enumerate(header)}
    for needed in ("bin_lo", "bin_hi", "mass_mean"):
        if needed not in col:
            raise ValueError(f"{path}: missing column {needed!r}")
    lo = np.array([float(r[col["bin_lo"]]) for r in rows])
    hi = np.array([float(r[col["bin_hi"]]) for r in rows])
    if not np.array_equal(lo[1:], hi[:-1]):
        raise ValueError(f"{path}: bins are not contiguous")
    edges = np.append(lo, hi[-1])
    mass = np.array([float(r[col["mass_mean"]]) for r in rows])
    n = int(rows[0][col["n"]]) if "n" in col and rows else 1
    return BinnedMeasure(edges, mass, None, n, even)


def read_field_csv(path) -> FieldProfile:
    """Load a field profile with columns ``nu, re, im``."""
    header, rows = read_csv(path)
    col = {name: i for i, name in enumerate(header)}
    for needed in ("nu", "re", "im"):
        if needed not in col:
            raise ValueError(f"{path}: missing column {needed!r}")
    nu = np.array([float(r[col["nu"]]) for r in rows])
    amp = np.array([float(r[col["re"]]) + 1j * float(r[col["im"]]) for r in rows])
    return FieldProfile(nu, amp)


def write_field_csv(path, field: FieldProfile) -> Path:
    rows = [[n, a.real, a.imag] for n, a in zip(field.nu, field.amplitude)]
    return write_csv(path, ["nu", "re", "im"], rows)
