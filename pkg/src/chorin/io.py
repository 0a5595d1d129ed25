"""File output: CSV with round-trip floats, legacy ASCII VTK, grid point clouds."""
from __future__ import annotations

import csv
import hashlib
import os

import numpy as np


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_ledger_csv(path, ledger):
    return write_csv(path, ledger.columns, ledger.as_table())


def write_grid_csv(path, grid):
    cls = grid.point_class()
    rows = ([int(z[0]), int(z[1]), int(z[2]), c] for z, c in zip(grid.coords, cls))
    return write_csv(path, ["z1", "z2", "z3", "class"], rows)


def write_field_csv(path, u):
    """One row per grid point: z1, z2, z3 then the field components v1[, v2, v3]."""
    vals = np.asarray(u.values)
    comps = 1 if vals.ndim == 1 else vals.shape[1]
    vals = vals.reshape(len(vals), comps)
    header = ["z1", "z2", "z3"] + [f"v{i + 1}" for i in range(comps)]
    rows = ([*map(int, z), *map(float, v)] for z, v in zip(u.grid.coords, vals))
    return write_csv(path, header, rows)


def write_vtk(path, fields: dict, title="chorin field"):
    """Legacy ASCII STRUCTURED_POINTS over the grid's bounding box; NaN off the grid.

    `fields` maps names to ScalarField or VectorField on one grid.
    """
    grid = next(iter(fields.values())).grid
    lo = grid.coords.min(axis=0)
    dims = grid.coords.max(axis=0) - lo + 1
    # VTK point order: x fastest
    flat = (grid.coords[:, 2] - lo[2]) * dims[0] * dims[1] + (grid.coords[:, 1] - lo[1]) * dims[0] \
        + (grid.coords[:, 0] - lo[0])
    total = int(np.prod(dims))
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        # legacy VTK has no comment syntax; the title line is the header comment
        fh.write((title.replace("\n", " ") + " | NaN marks points off the grid")[:255] + "\n")
        fh.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {dims[0]} {dims[1]} {dims[2]}\n")
        o = grid.h * lo
        fh.write(f"ORIGIN {o[0]!r} {o[1]!r} {o[2]!r}\n")
        fh.write(f"SPACING {grid.h!r} {grid.h!r} {grid.h!r}\n")
        fh.write(f"POINT_DATA {total}\n")
        for name, f in fields.items():
            vals = np.asarray(f.values)
            if vals.ndim == 1:
                out = np.full(total, np.nan)
                out[flat] = vals
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.writelines(f"{v!r}\n" for v in out.tolist())
            else:
                out = np.full((total, 3), np.nan)
                out[flat] = vals
                fh.write(f"VECTORS {name} double\n")
                fh.writelines(f"{a!r} {b!r} {c!r}\n" for a, b, c in out.tolist())
    return path


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
