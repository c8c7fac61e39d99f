"""Regular hexahedral meshes with compartment labels.

A :class:`HexMesh` is a box of ``nx*ny*nz`` cubic cells of edge length ``h``.
Each cell carries an unsigned 8-bit compartment label; label 0 is air and not
part of the computational domain.  Elements (labeled cells), faces and
vertices are numbered densely and deterministically:

* elements follow the flat cell index with x running fastest,
* faces are ordered by normal axis (x, y, z) and then by the flat index of
  their position in the face grid (x fastest),
* vertices follow the flat index of the vertex grid (x fastest), restricted to
  vertices of labeled cells.

A face at face-grid position ``p`` with normal axis ``a`` separates the cell
``p - e_a`` (its *minus* element) from the cell ``p`` (its *plus* element).
Its normal points along ``+e_a``, i.e. from minus to plus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import MeshDimensionError, ValidationError

__all__ = [
    "CompartmentTable",
    "FaceTopology",
    "HexMesh",
    "SphereSpec",
    "count_leaks",
    "face_topology",
    "generate_leaky_sphere",
    "generate_sphere_mesh",
    "load_labeled_voxels",
    "write_labeled_voxels",
]

AXES = "xyz"
# local vertex order inside a cell: dx fastest, then dy, then dz
_CORNERS = np.array([(dx, dy, dz) for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)])


@dataclass(frozen=True)
class CompartmentTable:
    """Mapping ``label -> (name, conductivity in S/m)``."""

    entries: Mapping[int, tuple[str, float]]

    def __post_init__(self):
        names = set()
        for label, (name, sigma) in self.entries.items():
            if not 1 <= int(label) <= 255:
                raise ValidationError(f"label {label} outside 1..255 (0 is reserved for air)")
            if not sigma > 0:
                raise ValidationError(f"conductivity of {name!r} must be positive, got {sigma}")
            if name in names:
                raise ValidationError(f"duplicate compartment name {name!r}")
            names.add(name)

    @classmethod
    def four_layer(cls) -> "CompartmentTable":
        """Brain / CSF / skull / skin with the standard sphere-model conductivities."""
        return cls({1: ("brain", 0.33), 2: ("csf", 1.79), 3: ("skull", 0.01), 4: ("skin", 0.43)})

    def sigma(self, label: int) -> float:
        try:
            return float(self.entries[int(label)][1])
        except KeyError:
            raise ValidationError(f"label {label} not in compartment table") from None

    def label_of(self, name: str) -> int:
        for label, (n, _) in self.entries.items():
            if n == name:
                return int(label)
        raise ValidationError(f"no compartment named {name!r}")

    def lookup(self) -> np.ndarray:
        """Array of length 256 with conductivities (NaN for unknown labels)."""
        out = np.full(256, np.nan)
        for label, (_, sigma) in self.entries.items():
            out[int(label)] = sigma
        return out

    def element_sigma(self, mesh: "HexMesh") -> np.ndarray:
        """Conductivity per element of ``mesh``; raises on labels missing from the table."""
        sig = self.lookup()[mesh.element_labels]
        if np.isnan(sig).any():
            missing = sorted(set(np.unique(mesh.element_labels)) - set(map(int, self.entries)))
            raise ValidationError(f"labels {missing} not in compartment table")
        return sig


@dataclass(eq=False)
class FaceTopology:
    """Face arrays of a mesh; see the module docstring for the conventions."""

    axis: np.ndarray  # int8, normal axis 0/1/2
    minus: np.ndarray  # element id on the -axis side, -1 if none
    plus: np.ndarray  # element id on the +axis side, -1 if none
    centroid: np.ndarray  # (n, 3) mm
    vertices: np.ndarray  # (n, 4) vertex ids
    grid_to_face: tuple  # per axis, face-grid shaped array of face ids (-1 where absent)

    @property
    def n_faces(self) -> int:
        return len(self.axis)

    @cached_property
    def interior(self) -> np.ndarray:
        return (self.minus >= 0) & (self.plus >= 0)

    @property
    def n_interior(self) -> int:
        return int(self.interior.sum())

    @property
    def n_boundary(self) -> int:
        return self.n_faces - self.n_interior

    @property
    def normal(self) -> np.ndarray:
        return np.eye(3)[self.axis]


@dataclass(eq=False)
class HexMesh:
    """Labeled regular hexahedral grid.

    Parameters
    ----------
    dims : (nx, ny, nz)
    spacing : float
        Edge length ``h`` in mm.
    origin : array_like
        Coordinates of the grid corner with the smallest coordinates (mm).
    labels : ndarray of uint8, shape ``dims``
        Compartment label per cell, indexed ``labels[i, j, k]``.
    """

    dims: tuple
    spacing: float
    origin: np.ndarray
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValidationError(f"dims must be three positive integers, got {self.dims}")
        self.spacing = float(self.spacing)
        if not self.spacing > 0:
            raise ValidationError(f"spacing must be positive, got {self.spacing}")
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        labels = np.asarray(self.labels)
        if labels.shape != self.dims:
            raise ValidationError(f"labels shape {labels.shape} does not match dims {self.dims}")
        self.labels = labels.astype(np.uint8, copy=False)

    # -- elements ---------------------------------------------------------
    @cached_property
    def element_cells(self) -> np.ndarray:
        """Flat (x-fastest) cell index of every element."""
        return np.flatnonzero(self.labels.ravel(order="F"))

    @property
    def n_elements(self) -> int:
        return len(self.element_cells)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    @cached_property
    def cell_to_element(self) -> np.ndarray:
        """Element id per flat cell index, -1 for air."""
        out = np.full(self.n_cells, -1, dtype=np.int64)
        out[self.element_cells] = np.arange(self.n_elements)
        return out

    @cached_property
    def element_labels(self) -> np.ndarray:
        return self.labels.ravel(order="F")[self.element_cells]

    @cached_property
    def element_ijk(self) -> np.ndarray:
        return np.stack(np.unravel_index(self.element_cells, self.dims, order="F"), axis=1)

    @cached_property
    def element_centers(self) -> np.ndarray:
        return self.origin + (self.element_ijk + 0.5) * self.spacing

    # -- faces ------------------------------------------------------------
    @cached_property
    def topology(self) -> FaceTopology:
        return face_topology(self)

    @cached_property
    def element_faces(self) -> np.ndarray:
        """(n_elements, 6) face ids ordered x-low, x-high, y-low, y-high, z-low, z-high."""
        ijk = self.element_ijk
        out = np.empty((self.n_elements, 6), dtype=np.int64)
        for a in range(3):
            g = self.topology.grid_to_face[a]
            hi = ijk.copy()
            hi[:, a] += 1
            out[:, 2 * a] = g[ijk[:, 0], ijk[:, 1], ijk[:, 2]]
            out[:, 2 * a + 1] = g[hi[:, 0], hi[:, 1], hi[:, 2]]
        return out

    # -- vertices ---------------------------------------------------------
    @cached_property
    def _vertex_numbering(self):
        vdims = tuple(d + 1 for d in self.dims)
        used = _vertex_touch_mask(self.labels != 0)
        flat = used.ravel(order="F")
        ids = np.full(flat.size, -1, dtype=np.int64)
        used_flat = np.flatnonzero(flat)
        ids[used_flat] = np.arange(len(used_flat))
        return vdims, ids, used_flat

    @property
    def n_vertices(self) -> int:
        return len(self._vertex_numbering[2])

    @cached_property
    def vertex_coords(self) -> np.ndarray:
        vdims, _, used_flat = self._vertex_numbering
        ijk = np.stack(np.unravel_index(used_flat, vdims, order="F"), axis=1)
        return self.origin + ijk * self.spacing

    def vertex_id(self, ijk: np.ndarray) -> np.ndarray:
        """Dense vertex id for vertex-grid indices ``ijk`` (..., 3); -1 if unused."""
        vdims, ids, _ = self._vertex_numbering
        ijk = np.asarray(ijk)
        flat = np.ravel_multi_index(tuple(np.moveaxis(ijk, -1, 0)), vdims, order="F")
        return ids[flat]

    @cached_property
    def element_vertices(self) -> np.ndarray:
        """(n_elements, 8) vertex ids; local corner ``dx + 2*dy + 4*dz``."""
        corners = self.element_ijk[:, None, :] + _CORNERS[None, :, :]
        return self.vertex_id(corners)

    # -- queries ----------------------------------------------------------
    def locate(self, points) -> np.ndarray:
        """Element id containing each point, -1 outside the labeled region.

        Points on a face plane belong to the cell on the lower side of the
        plane (the minus side of the face).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ijk = np.ceil((pts - self.origin) / self.spacing).astype(np.int64) - 1
        inside = np.all((ijk >= 0) & (ijk < np.array(self.dims)), axis=1)
        out = np.full(len(pts), -1, dtype=np.int64)
        flat = np.ravel_multi_index(tuple(ijk[inside].T), self.dims, order="F")
        out[inside] = self.cell_to_element[flat]
        return out

    def stats(self) -> dict:
        topo = self.topology
        return {
            "dims": self.dims,
            "spacing": self.spacing,
            "elements": self.n_elements,
            "faces": topo.n_faces,
            "interior_faces": topo.n_interior,
            "boundary_faces": topo.n_boundary,
            "vertices": self.n_vertices,
        }


def _vertex_touch_mask(mask: np.ndarray) -> np.ndarray:
    """Vertex-grid mask of vertices touched by at least one cell in ``mask``."""
    n = mask.shape
    out = np.zeros(tuple(d + 1 for d in n), dtype=bool)
    for dx, dy, dz in _CORNERS:
        out[dx : dx + n[0], dy : dy + n[1], dz : dz + n[2]] |= mask
    return out


def face_topology(mesh: HexMesh) -> FaceTopology:
    """Enumerate all faces of the labeled region of ``mesh``.

    Faces are ordered by axis and then by their flat face-grid index
    (x fastest).  Every face with at least one labeled neighbour exists;
    interior faces have two, boundary faces one.
    """
    c2e = mesh.cell_to_element.reshape(mesh.dims, order="F")
    h = mesh.spacing
    axes, minus, plus, centroid, verts, grids = [], [], [], [], [], []
    offset = 0
    for a in range(3):
        pad = [(0, 0)] * 3
        pad[a] = (1, 1)
        ep = np.pad(c2e, pad, constant_values=-1)
        n = mesh.dims[a]
        lo = np.take(ep, np.arange(0, n + 1), axis=a)
        hi = np.take(ep, np.arange(1, n + 2), axis=a)
        exists = (lo >= 0) | (hi >= 0)
        fdims = exists.shape
        flat = np.flatnonzero(exists.ravel(order="F"))
        p = np.stack(np.unravel_index(flat, fdims, order="F"), axis=1)
        grid = np.full(fdims, -1, dtype=np.int64)
        grid[tuple(p.T)] = offset + np.arange(len(flat))
        grids.append(grid)
        axes.append(np.full(len(flat), a, dtype=np.int8))
        minus.append(lo.ravel(order="F")[flat])
        plus.append(hi.ravel(order="F")[flat])
        cen = mesh.origin + (p + 0.5) * h
        cen[:, a] -= 0.5 * h
        centroid.append(cen)
        b1, b2 = [b for b in range(3) if b != a]
        corners = np.repeat(p[:, None, :], 4, axis=1)
        for c, (d1, d2) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
            corners[:, c, b1] += d1
            corners[:, c, b2] += d2
        verts.append(mesh.vertex_id(corners))
        offset += len(flat)
    return FaceTopology(
        axis=np.concatenate(axes),
        minus=np.concatenate(minus),
        plus=np.concatenate(plus),
        centroid=np.concatenate(centroid),
        vertices=np.concatenate(verts),
        grid_to_face=tuple(grids),
    )


# -- sphere models ------------------------------------------------------------


@dataclass
class SphereSpec:
    """Concentric-sphere label model on a regular grid.

    ``radii`` are outer radii in mm, innermost first.  ``centering`` selects
    whether the sphere center sits on a cell corner (``"corner"``) or on a
    cell centroid (``"cell"``) nearest the grid midpoint.  When ``dims`` is
    omitted the grid is sized to hold the outermost sphere plus ``padding``
    cells of air on every side.
    """

    radii: Sequence[float]
    spacing: float
    labels: Sequence[int] | None = None
    center: Sequence[float] = (0.0, 0.0, 0.0)
    dims: Sequence[int] | None = None
    centering: str = "corner"
    padding: int = 1

    def __post_init__(self):
        self.radii = tuple(float(r) for r in self.radii)
        if not self.radii or min(self.radii) <= 0:
            raise ValidationError("radii must be positive")
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ValidationError(f"radii must be strictly increasing, got {self.radii}")
        if self.labels is None:
            self.labels = tuple(range(1, len(self.radii) + 1))
        self.labels = tuple(int(v) for v in self.labels)
        if len(self.labels) != len(self.radii):
            raise ValidationError("one label per radius required")
        if any(not 1 <= v <= 255 for v in self.labels) or len(set(self.labels)) != len(self.labels):
            raise ValidationError(f"labels must be unique and in 1..255, got {self.labels}")
        if not float(self.spacing) > 0:
            raise ValidationError("spacing must be positive")
        self.spacing = float(self.spacing)
        if self.centering not in ("corner", "cell"):
            raise ValidationError(f"centering must be 'corner' or 'cell', got {self.centering!r}")
        if self.padding < 1:
            raise ValidationError("padding must be at least one cell")


def _sphere_grid(spec: SphereSpec):
    h = spec.spacing
    R = spec.radii[-1]
    if spec.dims is None:
        half = math.ceil(R / h - 1e-9) + spec.padding
        n = 2 * half if spec.centering == "corner" else 2 * half + 1
        dims = (n, n, n)
    else:
        dims = tuple(int(d) for d in spec.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValidationError(f"bad dims {dims}")
    center = np.asarray(spec.center, dtype=float)
    mid = np.array([d // 2 for d in dims], dtype=float)
    if spec.centering == "cell":
        mid += 0.5
    origin = center - mid * h
    lower = center - origin
    upper = origin + np.array(dims) * h - center
    need = R + spec.padding * h - 1e-9 * h
    if np.any(lower < need) or np.any(upper < need):
        raise MeshDimensionError(
            f"sphere of radius {R} mm plus {spec.padding} cell(s) of air does not fit in grid {dims} at h={h}"
        )
    return dims, origin, center


def generate_sphere_mesh(spec: SphereSpec) -> HexMesh:
    """Label every cell by the innermost layer whose radius is >= its centroid distance."""
    dims, origin, center = _sphere_grid(spec)
    h = spec.spacing
    coords = [origin[a] + (np.arange(dims[a]) + 0.5) * h - center[a] for a in range(3)]
    r2 = coords[0][:, None, None] ** 2 + coords[1][None, :, None] ** 2 + coords[2][None, None, :] ** 2
    labels = np.zeros(dims, dtype=np.uint8)
    for radius, label in reversed(list(zip(spec.radii, spec.labels))):
        labels[r2 <= radius * radius] = label
    return HexMesh(dims, h, origin, labels)


def generate_leaky_sphere(spec: SphereSpec, skull_outer_radius: float, skull_layer: int = 2) -> HexMesh:
    """Sphere mesh with the skull layer's outer radius replaced (thin-skull models).

    The new radius must lie strictly between the radii of the layers directly
    inside and outside the skull.
    """
    radii = list(spec.radii)
    if not 0 < skull_layer < len(radii) - 1:
        raise ValidationError("skull layer must have a layer inside and outside it")
    lo, hi = radii[skull_layer - 1], radii[skull_layer + 1]
    if not lo < skull_outer_radius < hi:
        raise ValidationError(f"skull outer radius {skull_outer_radius} not in ({lo}, {hi})")
    radii[skull_layer] = float(skull_outer_radius)
    leaky = SphereSpec(
        radii=radii,
        spacing=spec.spacing,
        labels=spec.labels,
        center=spec.center,
        dims=spec.dims,
        centering=spec.centering,
        padding=spec.padding,
    )
    return generate_sphere_mesh(leaky)


def count_leaks(mesh: HexMesh, label_a: int, label_b: int) -> int:
    """Number of vertices shared by at least one element of each of two labels."""
    present = set(np.unique(mesh.labels).tolist())
    for lab in (label_a, label_b):
        if lab == 0 or lab not in present:
            raise ValidationError(f"label {lab} does not occur in the mesh")
    va = _vertex_touch_mask(mesh.labels == label_a)
    vb = _vertex_touch_mask(mesh.labels == label_b)
    return int(np.count_nonzero(va & vb))


# -- labeled voxel files ------------------------------------------------------

_MAGIC = "HXM1"


def write_labeled_voxels(mesh: HexMesh, path, comment: str | None = None) -> None:
    """Write ``mesh`` as an HXM1 file (ASCII header line + uint8 labels, x fastest).

    ``comment`` is written first as a ``#`` line (e.g. provenance).
    """
    nx, ny, nz = mesh.dims
    ox, oy, oz = (repr(float(v)) for v in mesh.origin)
    header = f"{_MAGIC} {nx} {ny} {nz} {mesh.spacing!r} {ox} {oy} {oz}\n"
    if comment:
        header = "# " + comment.lstrip("# ").replace("\n", " ") + "\n" + header
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.labels.ravel(order="F").astype(np.uint8).tobytes())


def load_labeled_voxels(path, spacing: float | None = None, table: CompartmentTable | None = None) -> HexMesh:
    """Read an HXM1 file.

    ``spacing`` overrides the header value when given.  With a ``table``,
    every nonzero label must be listed in it.
    """
    data = Path(path).read_bytes()
    while data.startswith(b"#"):
        cut = data.find(b"\n")
        data = data[cut + 1 :] if cut >= 0 else b""
    nl = data.find(b"\n")
    if nl < 0:
        raise ValidationError(f"{path}: missing header line")
    parts = data[:nl].decode("ascii", errors="replace").split()
    if len(parts) != 8 or parts[0] != _MAGIC:
        raise ValidationError(f"{path}: malformed header {data[:nl][:80]!r}")
    try:
        dims = tuple(int(v) for v in parts[1:4])
        h = float(parts[4])
        origin = [float(v) for v in parts[5:8]]
    except ValueError as exc:
        raise ValidationError(f"{path}: malformed header ({exc})") from None
    payload = np.frombuffer(data[nl + 1 :], dtype=np.uint8)
    if min(dims) < 1 or payload.size != dims[0] * dims[1] * dims[2]:
        raise ValidationError(f"{path}: payload has {payload.size} bytes, header dims {dims}")
    if spacing is not None:
        h = float(spacing)
    labels = payload.reshape(dims, order="F").copy()
    if not labels.any():
        raise ValidationError(f"{path}: no labeled cells (empty domain)")
    if table is not None:
        unknown = sorted(set(np.unique(labels).tolist()) - {0} - set(map(int, table.entries)))
        if unknown:
            raise ValidationError(f"{path}: labels {unknown} not in compartment table")
    return HexMesh(dims, h, origin, labels)
