"""Deterministic output files: CSV time series, VTK snapshots, run manifest."""
from __future__ import annotations

import csv
import json
from dataclasses import astuple, fields
from pathlib import Path

import numpy as np

from .analysis import StepRecord
from .fem import FemSpace

COLUMNS = tuple(f.name for f in fields(StepRecord))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def emit_timeseries(records, path) -> Path:
    """Header plus one row per record; floats with 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for rec in records:
            writer.writerow([_fmt(v) for v in astuple(rec)])
    return path


def read_timeseries(path) -> list[StepRecord]:
    """Inverse of :func:`emit_timeseries`."""
    kinds = {f.name: f.type for f in fields(StepRecord)}
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {}
            for name in COLUMNS:
                text = row[name]
                if text == "":
                    vals[name] = None
                elif "int" in str(kinds[name]):
                    vals[name] = int(text)
                else:
                    vals[name] = float(text)
            out.append(StepRecord(**vals))
    return out


def emit_snapshot(space: FemSpace, u, path) -> tuple[Path, Path]:
    """Legacy ASCII VTK unstructured grid at ``path`` plus an ``x,y,u`` CSV twin."""
    path = Path(path)
    if path.suffix != ".vtk":
        path = path.with_suffix(".vtk")
    u = np.asarray(u, dtype=float)
    nodes, elements = space.mesh.nodes, space.mesh.elements
    if len(u) != len(nodes):
        raise ValueError("field length does not match the mesh")
    lines = [
        "# vtk DataFile Version 3.0",
        "phasefield snapshot",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(nodes)} double",
    ]
    lines += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in nodes]
    lines.append(f"CELLS {len(elements)} {4 * len(elements)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in elements]
    lines.append(f"CELL_TYPES {len(elements)}")
    lines += ["5"] * len(elements)
    lines += [f"POINT_DATA {len(nodes)}", "SCALARS u double 1", "LOOKUP_TABLE default"]
    lines += [_fmt(v) for v in u]
    path.write_text("\n".join(lines) + "\n")

    twin = path.with_suffix(".csv")
    rows = ["x,y,u"] + [f"{_fmt(x)},{_fmt(y)},{_fmt(v)}" for (x, y), v in zip(nodes, u)]
    twin.write_text("\n".join(rows) + "\n")
    return path, twin


def write_manifest(directory, config: dict, seed: int | None, extra: dict | None = None) -> Path:
    from . import __version__

    data = {"version": __version__, "seed": seed, "config": config}
    if extra:
        data.update(extra)
    path = Path(directory) / "manifest.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path
