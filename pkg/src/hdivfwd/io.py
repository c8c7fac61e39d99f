"""File output helpers: provenance lines, CSV tables, legacy VTK and config files.

Every text output starts with one ``#`` provenance line carrying the package
version, a hash of the resolved configuration and the seed.  Numbers are
written with 17 significant digits so that identical runs produce identical
bytes.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ValidationError
from .hexmesh import HexMesh

__all__ = [
    "config_hash",
    "load_config",
    "provenance_line",
    "read_table",
    "write_convergence",
    "write_element_current",
    "write_face_current",
    "write_potential",
    "write_reference",
    "write_vtk_fields",
    "write_vtk_labels",
]

# VTK_HEXAHEDRON corner order from the local dx + 2 dy + 4 dz numbering
_VTK_HEX = np.array([0, 1, 3, 2, 4, 5, 7, 6])


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def provenance_line(config: dict, seed=None) -> str:
    return f"# hdivfwd {__version__} config_sha256={config_hash(config)} seed={seed}"


def _f(v) -> str:
    return f"{float(v) + 0.0:.17g}"


def _write_rows(path, header_line, columns, rows) -> None:
    with open(path, "w") as fh:
        if header_line:
            fh.write(header_line.rstrip("\n") + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def write_potential(path, values, kind: str = "element", header_line: str | None = None) -> None:
    """``element_id,u`` or ``vertex_id,u``."""
    if kind not in ("element", "vertex"):
        raise ValidationError(f"unknown potential kind {kind!r}")
    _write_rows(path, header_line, [f"{kind}_id", "u"], ((str(i), _f(v)) for i, v in enumerate(values)))


def write_face_current(path, face_ids, j, header_line: str | None = None) -> None:
    """``face_id,j``: normal current density per interior face (global face ids)."""
    _write_rows(path, header_line, ["face_id", "j"], ((str(int(f)), _f(v)) for f, v in zip(face_ids, j)))


def write_element_current(path, current, header_line: str | None = None) -> None:
    """``element_id,jx,jy,jz``."""
    current = np.asarray(current, dtype=float)
    _write_rows(
        path,
        header_line,
        ["element_id", "jx", "jy", "jz"],
        ((str(i), *(_f(c) for c in row)) for i, row in enumerate(current)),
    )


def write_reference(path, points, values, header_line: str | None = None) -> None:
    """``point_id,x,y,z,u``: analytic reference potentials at evaluation points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    _write_rows(
        path,
        header_line,
        ["point_id", "x", "y", "z", "u"],
        ((str(i), *(_f(c) for c in p), _f(v)) for i, (p, v) in enumerate(zip(pts, values))),
    )


def write_convergence(path, history, header_line: str | None = None) -> None:
    """``iter,residual`` (relative residual norm per outer iteration)."""
    _write_rows(path, header_line, ["iter", "residual"], ((str(i), _f(r)) for i, r in enumerate(history)))


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Read a numeric CSV written by this package, skipping ``#`` lines."""
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValidationError(f"{path}: empty table")
    cols = [c.strip() for c in lines[0].split(",")]
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry ({exc})") from None
    if data.size == 0:
        data = np.zeros((0, len(cols)))
    if data.shape[1] != len(cols):
        raise ValidationError(f"{path}: rows do not match header {cols}")
    return cols, data


# -- VTK ----------------------------------------------------------------------


def _title(header_line: str | None) -> str:
    t = (header_line or "hdivfwd").lstrip("# ").replace("\n", " ")
    return t[:255]


def write_vtk_labels(mesh: HexMesh, path, header_line: str | None = None) -> None:
    """Full label grid as legacy ASCII ``STRUCTURED_POINTS`` with cell data."""
    nx, ny, nz = mesh.dims
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(_title(header_line) + "\n")
        fh.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx + 1} {ny + 1} {nz + 1}\n")
        fh.write("ORIGIN " + " ".join(_f(v) for v in mesh.origin) + "\n")
        fh.write("SPACING " + " ".join([_f(mesh.spacing)] * 3) + "\n")
        fh.write(f"CELL_DATA {nx * ny * nz}\nSCALARS labels unsigned_char 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, mesh.labels.ravel(order="F").astype(np.uint8), fmt="%d")


def write_vtk_fields(
    mesh: HexMesh,
    path,
    potential=None,
    current=None,
    header_line: str | None = None,
) -> None:
    """Labeled cells as legacy ASCII ``UNSTRUCTURED_GRID``.

    Cell data: ``labels``, ``potential`` (per element), ``current_magnitude``
    and the ``current`` vectors (per element, shape (n, 3)).  With moments in
    uA*mm and lengths in mm the current density is in uA/mm^2.
    """
    n = mesh.n_elements
    if potential is not None:
        potential = np.asarray(potential, dtype=float)
        if potential.shape != (n,):
            raise ValidationError(f"potential has shape {potential.shape}, mesh has {n} elements")
    if current is not None:
        current = np.asarray(current, dtype=float)
        if current.shape != (n, 3):
            raise ValidationError(f"current has shape {current.shape}, expected ({n}, 3)")
    pts = mesh.vertex_coords
    cells = mesh.element_vertices[:, _VTK_HEX]
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(_title(header_line) + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(pts)} double\n")
        np.savetxt(fh, pts, fmt="%.17g")
        fh.write(f"CELLS {n} {9 * n}\n")
        np.savetxt(fh, np.hstack([np.full((n, 1), 8), cells]), fmt="%d")
        fh.write(f"CELL_TYPES {n}\n")
        np.savetxt(fh, np.full(n, 12), fmt="%d")
        fh.write(f"CELL_DATA {n}\nSCALARS labels int 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, mesh.element_labels.astype(int), fmt="%d")
        if potential is not None:
            fh.write("SCALARS potential double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, potential, fmt="%.17g")
        if current is not None:
            fh.write("SCALARS current_magnitude double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, np.linalg.norm(current, axis=1), fmt="%.17g")
            fh.write("VECTORS current double\n")
            np.savetxt(fh, current, fmt="%.17g")


# -- configuration --------------------------------------------------------------


def load_config(path) -> configparser.ConfigParser:
    """Parse an INI-style ``key = value`` file with sections."""
    cp = configparser.ConfigParser(interpolation=None)
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file {path} does not exist")
    try:
        cp.read(p)
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return cp
