"""File formats: VTK legacy snapshots, force-series CSV and surrogate point files."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import FlowState, FreestreamConditions, Grid, GridSpec
from .solver import ForceSeries, total_pressure

SNAPSHOT_TAG = "initlab-snapshot"


class SnapshotFormatError(ValueError):
    pass


class SurrogateFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# --------------------------------------------------------------------------
# VTK legacy snapshots


def _fmt(values: np.ndarray) -> str:
    # repr precision so that a write/read round trip is bit-exact
    return "\n".join(repr(float(x)) for x in np.ravel(values, order="F"))


def write_snapshot(path, state: FlowState, grid: Grid, fs: FreestreamConditions, include_k: bool = True) -> Path:
    """Write a STRUCTURED_POINTS file with cell data u, v, p, k, p0.

    The title line carries the grid and freestream metadata. The staggered
    face velocities are stored as dataset-level FIELD arrays so that a
    snapshot reloads bit-exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nx, ny = grid.shape
    meta = (
        f"{SNAPSHOT_TAG} nx={nx} ny={ny} lx={grid.lx!r} ly={grid.ly!r} t={float(state.t)!r} "
        f"u_inf={fs.u_inf!r} rho={fs.rho!r} nu={fs.nu!r} k_inf={fs.k_inf!r} l0={fs.l0!r}"
    )
    uc, vc = state.cell_velocity()
    p0 = total_pressure(state, fs)
    cell_fields = [("u", uc), ("v", vc), ("p", state.p)]
    if include_k:
        cell_fields.append(("k", state.k))
    cell_fields.append(("p0", p0))
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(meta + "\n")
        fh.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx + 1} {ny + 1} 1\n")
        fh.write(f"ORIGIN 0 0 0\nSPACING {grid.dx!r} {grid.dy!r} 1\n")
        fh.write("FIELD FieldData 2\n")
        fh.write(f"u_face 1 {(nx + 1) * ny} double\n{_fmt(state.u)}\n")
        fh.write(f"v_face 1 {nx * (ny + 1)} double\n{_fmt(state.v)}\n")
        fh.write(f"CELL_DATA {nx * ny}\n")
        for name, arr in cell_fields:
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n{_fmt(arr)}\n")
    return path


@dataclass
class Snapshot:
    meta: dict
    grid: Grid
    cell: dict
    u_face: np.ndarray | None
    v_face: np.ndarray | None

    @property
    def t(self) -> float:
        return float(self.meta.get("t", 0.0))


def read_snapshot(path) -> Snapshot:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"snapshot not found: {path}")
    with open(path) as fh:
        lines = fh.read().split("\n")
    if len(lines) < 4 or not lines[0].startswith("# vtk DataFile"):
        raise SnapshotFormatError(f"{path}: not a VTK legacy file")
    meta: dict = {}
    for tok in lines[1].split():
        if "=" in tok:
            key, val = tok.split("=", 1)
            try:
                meta[key] = int(val) if key in ("nx", "ny") else float(val)
            except ValueError as exc:
                raise SnapshotFormatError(f"{path}: bad metadata token {tok!r}") from exc
    if lines[2].strip() != "ASCII" or lines[3].strip() != "DATASET STRUCTURED_POINTS":
        raise SnapshotFormatError(f"{path}: expected ASCII STRUCTURED_POINTS")

    pos = 4
    dims = spacing = None
    fields: dict[str, np.ndarray] = {}
    cell: dict[str, np.ndarray] = {}
    n_cells = None

    def take(count, where):
        nonlocal pos
        vals = []
        while len(vals) < count:
            if pos >= len(lines):
                raise SnapshotFormatError(f"{path}: truncated data in {where}")
            vals.extend(lines[pos].split())
            pos += 1
        try:
            return np.array([float(x) for x in vals[:count]])
        except ValueError as exc:
            raise SnapshotFormatError(f"{path}: non-numeric data in {where}") from exc

    while pos < len(lines):
        line = lines[pos].strip()
        pos += 1
        if not line:
            continue
        head = line.split()
        if head[0] == "DIMENSIONS":
            dims = tuple(int(x) for x in head[1:4])
        elif head[0] == "SPACING":
            spacing = tuple(float(x) for x in head[1:4])
        elif head[0] == "ORIGIN":
            pass
        elif head[0] == "FIELD":
            for _ in range(int(head[2])):
                while not lines[pos].strip():
                    pos += 1
                name, ncomp, ntup, _ = lines[pos].split()
                pos += 1
                fields[name] = take(int(ncomp) * int(ntup), name)
        elif head[0] == "CELL_DATA":
            n_cells = int(head[1])
        elif head[0] == "SCALARS":
            if n_cells is None:
                raise SnapshotFormatError(f"{path}: SCALARS before CELL_DATA")
            name = head[1]
            if lines[pos].strip().startswith("LOOKUP_TABLE"):
                pos += 1
            cell[name] = take(n_cells, name)
        else:
            raise SnapshotFormatError(f"{path}: unexpected line {line[:40]!r}")

    if dims is None or spacing is None:
        raise SnapshotFormatError(f"{path}: missing DIMENSIONS or SPACING")
    nx, ny = dims[0] - 1, dims[1] - 1
    if "nx" in meta and (meta["nx"], meta["ny"]) != (nx, ny):
        raise SnapshotFormatError(f"{path}: metadata dims {meta['nx']}x{meta['ny']} disagree with DIMENSIONS")
    lx = meta.get("lx", nx * spacing[0])
    ly = meta.get("ly", ny * spacing[1])
    grid = Grid(GridSpec(nx, ny, lx, ly))
    shaped = {}
    for name, arr in cell.items():
        if arr.size != nx * ny:
            raise SnapshotFormatError(f"{path}: cell field {name} has {arr.size} values, expected {nx * ny}")
        shaped[name] = arr.reshape((nx, ny), order="F")
    u_face = v_face = None
    if "u_face" in fields:
        if fields["u_face"].size != (nx + 1) * ny:
            raise SnapshotFormatError(f"{path}: u_face has wrong length")
        u_face = fields["u_face"].reshape((nx + 1, ny), order="F")
    if "v_face" in fields:
        if fields["v_face"].size != nx * (ny + 1):
            raise SnapshotFormatError(f"{path}: v_face has wrong length")
        v_face = fields["v_face"].reshape((nx, ny + 1), order="F")
    return Snapshot(meta, grid, shaped, u_face, v_face)


# --------------------------------------------------------------------------
# Force series CSV


def write_series_csv(path, series: ForceSeries, filtered: np.ndarray | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["t", "fx", "fy"] + (["filtered"] if filtered is not None else [])
        w.writerow(header)
        for i in range(len(series)):
            row = [repr(float(series.times[i])), repr(float(series.fx[i])), repr(float(series.fy[i]))]
            if filtered is not None:
                row.append(repr(float(filtered[i])))
            w.writerow(row)
    return path


def read_series_csv(path) -> tuple[ForceSeries, np.ndarray | None]:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:3] != ["t", "fx", "fy"]:
        raise ValueError(f"{path}: expected header t,fx,fy")
    has_filtered = len(rows[0]) > 3 and rows[0][3] == "filtered"
    data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(rows[0]))
    series = ForceSeries(data[:, 0], data[:, 1], data[:, 2])
    return series, (data[:, 3] if has_filtered else None)


# --------------------------------------------------------------------------
# Surrogate point files


def write_surrogate(path, sf) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("SURROGATE v1\n")
        fh.write("bbox " + " ".join(repr(float(b)) for b in sf.bbox) + "\n")
        fh.write(f"n {len(sf.points)}\n")
        for (x, y), u, v, p, k in zip(sf.points, sf.u, sf.v, sf.p, sf.k):
            fh.write(" ".join(repr(float(a)) for a in (x, y, u, v, p, k)) + "\n")
    return path


def parse_surrogate(text: str):
    """Parse the ``SURROGATE v1`` text format into constructor arguments."""
    lines = [(n, ln.split("#", 1)[0].strip()) for n, ln in enumerate(text.splitlines(), 1)]
    lines = [(n, ln) for n, ln in lines if ln]
    if not lines or lines[0][1] != "SURROGATE v1":
        raise SurrogateFormatError("expected header 'SURROGATE v1'", lines[0][0] if lines else 1)
    if len(lines) < 3:
        raise SurrogateFormatError("missing bbox or count line", lines[-1][0])
    n_line, bbox_line = lines[1]
    parts = bbox_line.split()
    if len(parts) != 5 or parts[0] != "bbox":
        raise SurrogateFormatError("expected 'bbox xmin ymin xmax ymax'", n_line)
    try:
        bbox = tuple(float(x) for x in parts[1:])
    except ValueError:
        raise SurrogateFormatError("non-numeric bbox", n_line) from None
    n_line, count_line = lines[2]
    parts = count_line.split()
    if len(parts) != 2 or parts[0] != "n" or not parts[1].isdigit():
        raise SurrogateFormatError("expected 'n <count>'", n_line)
    count = int(parts[1])
    rows = lines[3:]
    if len(rows) != count:
        raise SurrogateFormatError(f"declared {count} rows, found {len(rows)}", rows[-1][0] if rows else n_line)
    data = np.empty((count, 6))
    for r, (n_line, ln) in enumerate(rows):
        parts = ln.split()
        if len(parts) != 6:
            raise SurrogateFormatError(f"expected 6 columns 'x y u v p k', got {len(parts)}", n_line)
        try:
            data[r] = [float(x) for x in parts]
        except ValueError:
            raise SurrogateFormatError("non-numeric value", n_line) from None
        if not np.all(np.isfinite(data[r])):
            raise SurrogateFormatError("non-finite value", n_line)
        if data[r, 5] < 0:
            raise SurrogateFormatError("negative k", n_line)
        x, y = data[r, :2]
        if not (bbox[0] <= x <= bbox[2] and bbox[1] <= y <= bbox[3]):
            raise SurrogateFormatError(f"point ({x}, {y}) outside bbox", n_line)
    return bbox, data


def list_series(output_dir) -> dict[str, Path]:
    """Strategy name -> series CSV for every ``<name>/series.csv`` below ``output_dir``."""
    out = {}
    root = Path(output_dir)
    if not root.is_dir():
        return out
    for entry in sorted(os.listdir(root)):
        f = root / entry / "series.csv"
        if f.is_file():
            out[entry] = f
    return out
