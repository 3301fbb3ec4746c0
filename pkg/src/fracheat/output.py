"""Field and time-series writers: legacy VTK and CSV.

Built Cartesian grids are written as true unstructured geometry (quads for
matrix cells, line elements for fracture cells).  Imported grids without
structured metadata degrade to a per-cell vertex cloud carrying the same
cell data.  Floats are written with shortest round-trip precision.
"""

from __future__ import annotations

import numpy as np

from .mesh import GridError


def _fmt(x):
    return repr(float(x))


def write_csv(path_or_stream, columns, header):
    """Write named columns of equal length; values round-trip exactly."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    if cols and any(len(c) != len(cols[0]) for c in cols):
        raise ValueError("csv columns must have equal length")
    own = not hasattr(path_or_stream, "write")
    fh = open(path_or_stream, "w") if own else path_or_stream
    try:
        fh.write(",".join(header) + "\n")
        n = len(cols[0]) if cols else 0
        for k in range(n):
            fh.write(",".join(_fmt(c[k]) for c in cols) + "\n")
    finally:
        if own:
            fh.close()


def read_csv(path):
    """Read back a write_csv file: (header list, list of float arrays)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = [np.array([float(r[k]) for r in rows]) for k in range(len(header))]
    return header, cols


def write_vtk(grid, fields, path_or_stream, title="fracheat fields"):
    """Legacy ASCII unstructured-grid file with per-cell scalar data.

    fields maps names to per-cell arrays; an empty mapping writes geometry
    only.  Field names must be single tokens.
    """
    for name, values in fields.items():
        if len(values) != grid.n_cells:
            raise GridError(
                f"field {name!r} has {len(values)} values for {grid.n_cells} cells"
            )
        if any(ch.isspace() for ch in name):
            raise GridError(f"field name {name!r} must not contain whitespace")

    own = not hasattr(path_or_stream, "write")
    fh = open(path_or_stream, "w") if own else path_or_stream
    try:
        _write_vtk_body(grid, fields, fh, title)
    finally:
        if own:
            fh.close()


def _write_vtk_body(grid, fields, fh, title):
    fh.write("# vtk DataFile Version 3.0\n")
    fh.write(title + "\n")
    fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")

    meta = grid.cartesian
    if meta is not None:
        n_nodes = (meta.nx + 1) * (meta.ny + 1)
        fh.write(f"POINTS {n_nodes} double\n")
        for j in range(meta.ny + 1):
            for i in range(meta.nx + 1):
                fh.write(
                    f"{_fmt(meta.x0 + i * meta.hx)} {_fmt(meta.y0 + j * meta.hy)} 0.0\n"
                )
        sizes = [len(ns) for ns in grid.cell_nodes]
        fh.write(f"CELLS {grid.n_cells} {grid.n_cells + sum(sizes)}\n")
        for ns in grid.cell_nodes:
            fh.write(str(len(ns)) + " " + " ".join(str(n) for n in ns) + "\n")
        fh.write(f"CELL_TYPES {grid.n_cells}\n")
        for ns in grid.cell_nodes:
            fh.write("9\n" if len(ns) == 4 else "3\n")  # VTK_QUAD / VTK_LINE
    else:
        # vertex-cloud fallback for grids without reconstructable geometry
        fh.write(f"POINTS {grid.n_cells} double\n")
        for c in range(grid.n_cells):
            fh.write(
                f"{_fmt(grid.cell_center[c, 0])} {_fmt(grid.cell_center[c, 1])} 0.0\n"
            )
        fh.write(f"CELLS {grid.n_cells} {2 * grid.n_cells}\n")
        for c in range(grid.n_cells):
            fh.write(f"1 {c}\n")
        fh.write(f"CELL_TYPES {grid.n_cells}\n")
        for _ in range(grid.n_cells):
            fh.write("1\n")  # VTK_VERTEX

    if fields:
        fh.write(f"CELL_DATA {grid.n_cells}\n")
        for name, values in fields.items():
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in np.asarray(values, dtype=float):
                fh.write(_fmt(v) + "\n")


def write_labels(partition, path_or_stream):
    """Per-fine-cell coarse labels, one integer per line."""
    own = not hasattr(path_or_stream, "write")
    fh = open(path_or_stream, "w") if own else path_or_stream
    try:
        for v in partition.labels:
            fh.write(f"{int(v)}\n")
    finally:
        if own:
            fh.close()
