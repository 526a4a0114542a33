"""Legacy ASCII VTK unstructured-grid output and a matching reader.

Values are printed with 17 significant digits so a round trip through the
file reproduces every double exactly.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

VTK_TETRA = 10
FMT = "%.17g"


class VtkError(IOError):
    pass


def _write_array(fh, name: str, values: np.ndarray) -> None:
    values = np.asarray(values)
    if values.ndim == 1:
        if np.issubdtype(values.dtype, np.integer):
            fh.write(f"SCALARS {name} int 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, values.reshape(-1, 1), fmt="%d")
        else:
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, values.reshape(-1, 1), fmt=FMT)
    elif values.ndim == 2 and values.shape[1] == 3:
        fh.write(f"VECTORS {name} double\n")
        np.savetxt(fh, values, fmt=FMT)
    else:
        raise ValueError(f"field {name!r}: only scalars and 3-vectors are supported, got shape {values.shape}")


def write_vtk(path, points: np.ndarray, elements: np.ndarray, point_data: dict | None = None,
              cell_data: dict | None = None, title: str = "hotemboss") -> Path:
    """Write a tetrahedral unstructured grid.

    Parameters
    ----------
    points : (N, 3) array
        Coordinates to write (already deformed/amplified if wanted).
    elements : (E, 4) int array
    point_data, cell_data : dict
        Name to array; 1-D arrays become scalars (``int`` for integer dtype),
        ``(n, 3)`` arrays become vectors.
    """
    path = Path(path)
    points = np.asarray(points, dtype=float)
    elements = np.asarray(elements, dtype=np.int64)
    try:
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write(title.replace("\n", " ")[:255] + "\n")
            fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {len(points)} double\n")
            np.savetxt(fh, points, fmt=FMT)
            fh.write(f"CELLS {len(elements)} {5 * len(elements)}\n")
            np.savetxt(fh, np.column_stack([np.full(len(elements), 4), elements]), fmt="%d")
            fh.write(f"CELL_TYPES {len(elements)}\n")
            np.savetxt(fh, np.full((len(elements), 1), VTK_TETRA), fmt="%d")
            if point_data:
                fh.write(f"POINT_DATA {len(points)}\n")
                for name, values in point_data.items():
                    _write_array(fh, name, values)
            if cell_data:
                fh.write(f"CELL_DATA {len(elements)}\n")
                for name, values in cell_data.items():
                    _write_array(fh, name, values)
    except OSError as exc:
        raise VtkError(f"cannot write VTK file {path}: {exc}") from exc
    return path


def read_vtk(path) -> dict:
    """Parse a file written by :func:`write_vtk`.

    Returns a dict with ``points``, ``elements``, ``point_data`` and
    ``cell_data``.
    """
    path = Path(path)
    try:
        tokens = path.read_text().split("\n")
    except OSError as exc:
        raise VtkError(f"cannot read VTK file {path}: {exc}") from exc
    lines = iter(tokens[4:])
    out = {"points": None, "elements": None, "point_data": {}, "cell_data": {}}
    section = None
    counts = {}

    def take(n):
        return [next(lines) for _ in range(n)]

    for line in lines:
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        if key == "POINTS":
            n = int(parts[1])
            counts["POINT_DATA"] = n
            out["points"] = np.array([[float(v) for v in r.split()] for r in take(n)])
        elif key == "CELLS":
            n = int(parts[1])
            counts["CELL_DATA"] = n
            out["elements"] = np.array([[int(v) for v in r.split()[1:]] for r in take(n)], dtype=np.int64)
        elif key == "CELL_TYPES":
            take(int(parts[1]))
        elif key in ("POINT_DATA", "CELL_DATA"):
            section = key
        elif key == "SCALARS":
            next(lines)  # LOOKUP_TABLE
            n = counts[section]
            conv = int if parts[2] == "int" else float
            arr = np.array([conv(r) for r in take(n)])
            out["point_data" if section == "POINT_DATA" else "cell_data"][parts[1]] = arr
        elif key == "VECTORS":
            n = counts[section]
            arr = np.array([[float(v) for v in r.split()] for r in take(n)])
            out["point_data" if section == "POINT_DATA" else "cell_data"][parts[1]] = arr
        else:
            raise VtkError(f"{path}: unexpected line {line!r}")
    return out
