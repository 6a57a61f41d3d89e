"""Persistence: atom clouds, fields, reports and run manifests.

All writers are deterministic: floats are printed in their shortest
round-trip form, JSON keys are sorted and no timestamps are recorded.

Binary field layout (little-endian)::

    5 bytes   magic b"SPDH1"
    uint32    d
    uint32    number of time levels K+1
    uint32    sites per axis, d of them
    float64   times, K+1 of them
    float64   axis coordinates, axis by axis
    float64   values, row-major over (time, axis_1, ..., axis_d)
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .noise import LevyMarkSpec, NoiseRealization
from .solver import FieldGrid

MAGIC = b"SPDH1"


def _fmt(v: float) -> str:
    return repr(float(v))


def _coord_names(dim: int) -> list[str]:
    return [f"x{k + 1}" for k in range(dim)]


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps_json(obj), encoding="utf-8")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------- atoms

def write_atoms(path, real: NoiseRealization) -> tuple[Path, Path]:
    """Write ``t,x1[,x2[,x3]],z`` rows in generation order plus a ``.json`` sidecar."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *_coord_names(real.dim), "z"])
        for row in real.atom_rows():
            w.writerow([_fmt(v) for v in row])
    sidecar = path.with_suffix(".json")
    write_json(sidecar, real.metadata())
    return path, sidecar


def read_atoms(path, sidecar=None) -> NoiseRealization:
    path = Path(path)
    meta = read_json(sidecar or path.with_suffix(".json"))
    dim = int(meta["dim"])
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = ["t", *_coord_names(dim), "z"]
    if not rows or rows[0] != header:
        raise ValueError(f"{path}: expected header {','.join(header)}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, dim + 2)
    mark = meta.get("mark_spec")
    return NoiseRealization.from_atoms(
        data, meta["T"], meta["R"], dim=dim, cutoff=meta["cutoff"], seed=meta["seed"],
        compensation=meta.get("compensation") or {}, discarded_mass_bound=meta.get("discarded_mass_bound"),
        mark_spec=LevyMarkSpec(**mark) if mark else None,
    )


# --------------------------------------------------------------------------- fields

def write_field_csv(path, field: FieldGrid) -> Path:
    """Rows ``t,x1..,y`` time-major, sites in lexicographic axis order."""
    path = Path(path)
    sites = field.sites()
    flat = field.flat()
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *_coord_names(field.dim), "y"])
        for k, t in enumerate(field.times):
            for m, x in enumerate(sites):
                w.writerow([_fmt(t), *(_fmt(c) for c in x), _fmt(flat[k, m])])
    return path


def read_field_csv(path) -> FieldGrid:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    dim = len(rows[0]) - 2
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    times = np.unique(data[:, 0])
    axes = tuple(np.unique(data[:, 1 + k]) for k in range(dim))
    shape = (len(times),) + tuple(len(a) for a in axes)
    return FieldGrid(times, axes, data[:, -1].reshape(shape))


def write_field_binary(path, field: FieldGrid) -> Path:
    path = Path(path)
    header = MAGIC + struct.pack("<II", field.dim, len(field.times))
    header += struct.pack(f"<{field.dim}I", *(len(a) for a in field.axes))
    body = [np.asarray(field.times, dtype="<f8").tobytes()]
    body += [np.asarray(a, dtype="<f8").tobytes() for a in field.axes]
    body.append(np.ascontiguousarray(field.values, dtype="<f8").tobytes())
    path.write_bytes(header + b"".join(body))
    return path


def read_field_binary(path) -> FieldGrid:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise ValueError(f"{path}: not an SPDH1 field file")
    dim, n_t = struct.unpack_from("<II", raw, 5)
    sizes = struct.unpack_from(f"<{dim}I", raw, 13)
    offset = 13 + 4 * dim

    def take(n):
        nonlocal offset
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
        offset += 8 * n
        return arr.astype(float)

    times = take(n_t)
    axes = tuple(take(n) for n in sizes)
    values = take(n_t * math.prod(sizes)).reshape((n_t,) + tuple(sizes))
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after field payload")
    return FieldGrid(times, axes, values)


# --------------------------------------------------------------------------- reports

def write_rows_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else ("" if v is None else v) for v in row])
    return path


def write_report(directory, report) -> tuple[Path, Path]:
    directory = Path(directory)
    js = directory / "report.json"
    js.write_text(report.to_json() + "\n", encoding="utf-8")
    table = write_rows_csv(directory / "report.csv", ["study", "param", "seed", "value"], report.rows())
    return js, table
