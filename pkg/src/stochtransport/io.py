"""Artifact writers: CSV tables, binary PGM heatmaps and the JSON-lines run manifest.

CSV floats are written with 17 significant digits so values round-trip
exactly, and files use LF line endings regardless of platform.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError
from .fields import ScalarField, VectorField


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path: str | os.PathLike) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def field_rows(f: ScalarField | VectorField) -> tuple[list[str], list[list]]:
    grid = f.grid
    d = grid.dim
    idx = grid.index_coords()
    pts = grid.nodes()
    if isinstance(f, ScalarField):
        vals = f.values.reshape(-1, 1)
        vnames = ["value"]
    else:
        vals = f.values.reshape(d, -1).T
        vnames = [f"value{c}" for c in range(d)]
    axes = "ijk"[:d]
    header = list(axes) + [f"x{c}" for c in range(d)] + vnames
    rows = [list(map(int, idx[m])) + list(pts[m]) + list(vals[m]) for m in range(grid.size)]
    return header, rows


def write_field_csv(f: ScalarField | VectorField, path: str | os.PathLike) -> Path:
    header, rows = field_rows(f)
    return write_csv(path, header, rows)


def write_pgm(values: np.ndarray | ScalarField, path: str | os.PathLike,
              vmin: float | None = None, vmax: float | None = None) -> Path:
    """8-bit binary PGM of a 2-d array; the linear scale goes in a comment line.

    Row 0 of the image is the largest second coordinate so the picture has
    the usual orientation.
    """
    arr = values.values if isinstance(values, ScalarField) else np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise DomainError("PGM output needs a 2-d field")
    lo = float(np.min(arr)) if vmin is None else float(vmin)
    hi = float(np.max(arr)) if vmax is None else float(vmax)
    span = hi - lo
    if span > 0:
        scaled = np.clip(np.round((arr - lo) / span * 255.0), 0, 255)
    else:
        scaled = np.zeros_like(arr)
    img = scaled.astype(np.uint8).T[::-1]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = img.shape
    head = f"P5\n# scale min={format_value(lo)} max={format_value(hi)}\n{w} {h}\n255\n"
    with open(path, "wb") as fh:
        fh.write(head.encode("ascii"))
        fh.write(img.tobytes())
    return path


def read_pgm(path: str | os.PathLike) -> tuple[np.ndarray, float, float]:
    """Return (image rows, min, max) from a file written by ``write_pgm``."""
    data = Path(path).read_bytes()
    lines = data.split(b"\n", 4)
    if lines[0] != b"P5":
        raise DomainError("not a binary PGM")
    scale = lines[1].decode().split()
    lo = float(scale[2].split("=")[1])
    hi = float(scale[3].split("=")[1])
    w, h = map(int, lines[2].split())
    img = np.frombuffer(lines[4], dtype=np.uint8, count=w * h).reshape(h, w)
    return img, lo, hi


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_manifest(out_dir: str | os.PathLike, records: Sequence[dict]) -> Path:
    """Write the directory's single manifest, one JSON object per line."""
    path = Path(out_dir) / "manifest.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, default=str) + "\n")
    return path
