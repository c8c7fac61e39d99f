"""Current-dipole right-hand sides for the mixed formulation.

Two representations of ``j^p = m delta(x - x0)`` are provided:

* ``direct``: face-space vector ``b_i = <m / sigma, w_i(x0)>``; the element
  right-hand side is then ``B A^{-1} b``.
* ``projected``: ``b_i = <m, w_i(x0)>`` (no conductivity), divided by the
  cell volume to give RT0 coefficients whose current moment is ``m``, then
  mapped to the element space with ``B``; a face-aligned dipole becomes one
  source and one sink of strength ``|m| / h``.

Only the faces of the element containing ``x0`` can be nonzero.  A dipole on
a face plane is assigned to the element below the plane.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import PlacementError, ValidationError
from .hexmesh import HexMesh

__all__ = [
    "Dipole",
    "RhsSpec",
    "align_to_face",
    "local_face_weights",
    "place_sources",
    "read_dipoles",
    "rhs_direct",
    "rhs_projected",
    "rt0_eval",
    "write_dipoles",
]


@dataclass(frozen=True)
class Dipole:
    """Point current dipole; position in mm, moment in current x mm."""

    position: tuple
    moment: tuple
    id: int = 0
    eccentricity: float = float("nan")

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        mom = tuple(float(v) for v in self.moment)
        if len(pos) != 3 or len(mom) != 3:
            raise ValidationError("position and moment must be 3-vectors")
        if not np.any(mom):
            raise ValidationError("dipole moment must be nonzero")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "moment", mom)

    @property
    def x0(self) -> np.ndarray:
        return np.array(self.position)

    @property
    def m(self) -> np.ndarray:
        return np.array(self.moment)


@dataclass(eq=False)
class RhsSpec:
    """Right-hand side of one dipole.

    ``payload`` is the interior-face vector for ``direct`` and the element
    vector ``h`` for ``projected``; ``face_source`` keeps the face
    coefficients the projected payload was built from.
    """

    kind: str
    payload: np.ndarray
    element: int
    face_source: np.ndarray | None = None

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.payload)


def rt0_eval(mesh: HexMesh, face: int, x) -> np.ndarray:
    """Value of the RT0 basis function of ``face`` at ``x`` (zero outside its support)."""
    topo = mesh.topology
    a = int(topo.axis[face])
    h = mesh.spacing
    x = np.asarray(x, dtype=float)
    d = x - topo.centroid[face]
    n = np.zeros(3)
    n[a] = 1.0
    others = [b for b in range(3) if b != a]
    tol = 1e-12 * h
    if abs(d[a]) > h + tol or any(abs(d[b]) > 0.5 * h + tol for b in others):
        return np.zeros(3)
    side = topo.minus[face] if d[a] < 0 else topo.plus[face]
    if d[a] == 0:
        side = max(topo.minus[face], topo.plus[face])
    if side < 0:
        return np.zeros(3)
    return max(0.0, 1.0 - abs(d[a]) / h) * n


def local_face_weights(mesh: HexMesh, element: int, x0) -> np.ndarray:
    """Normal-direction weights of the six face functions of ``element`` at ``x0``.

    Returns a (6, 3) array: row ``f`` is ``w_f(x0)`` in the face order of
    :attr:`HexMesh.element_faces`.
    """
    lo = mesh.origin + mesh.element_ijk[element] * mesh.spacing
    s = (np.asarray(x0, dtype=float) - lo) / mesh.spacing
    w = np.zeros((6, 3))
    for a in range(3):
        w[2 * a, a] = 1.0 - s[a]
        w[2 * a + 1, a] = s[a]
    return w


def _containing_element(mesh: HexMesh, dipole: Dipole) -> int:
    e = int(mesh.locate(dipole.x0)[0])
    if e < 0:
        raise PlacementError(f"dipole {dipole.id} at {dipole.position} lies outside the labeled domain")
    return e


def _face_vector(mesh, system, dipole, element, scale):
    vals = local_face_weights(mesh, element, dipole.x0) @ dipole.m * scale
    faces = mesh.element_faces[element]
    cols = system.face_column[faces]
    b = np.zeros(system.n_faces)
    dropped = (cols < 0) & (vals != 0)
    if dropped.any():
        warnings.warn(
            f"dipole {dipole.id}: {int(dropped.sum())} boundary-face component(s) dropped",
            stacklevel=3,
        )
    keep = cols >= 0
    np.add.at(b, cols[keep], vals[keep])
    return b


def rhs_direct(dipole: Dipole, system, mesh: HexMesh, table=None) -> RhsSpec:
    """Face-space right-hand side weighted by the inverse conductivity of the source element."""
    e = _containing_element(mesh, dipole)
    sigma = system.sigma[e] if table is None else table.sigma(mesh.element_labels[e])
    b = _face_vector(mesh, system, dipole, e, 1.0 / sigma)
    return RhsSpec("direct", b, e)


def rhs_projected(dipole: Dipole, system, mesh: HexMesh) -> RhsSpec:
    """Element-space right-hand side ``B b / h^3`` (independent of conductivity).

    Each RT0 function integrates to ``h^3`` times its normal, so ``b / h^3``
    is the face representation with current moment ``m``.  At ``h = 1`` this
    is plain ``B b``.
    """
    e = _containing_element(mesh, dipole)
    b = _face_vector(mesh, system, dipole, e, 1.0 / mesh.spacing**3)
    return RhsSpec("projected", system.B @ b, e, face_source=b)


def align_to_face(mesh: HexMesh, dipole: Dipole) -> Dipole:
    """Move a dipole to the nearest face centroid, moment along that face's normal.

    The axis is the dominant component of the moment; the magnitude and the
    sign of that component are kept.
    """
    m = dipole.m
    a = int(np.argmax(np.abs(m)))
    h = mesh.spacing
    rel = (dipole.x0 - mesh.origin) / h
    pos = np.floor(rel) + 0.5
    pos[a] = np.round(rel[a])
    mom = np.zeros(3)
    mom[a] = np.sign(m[a]) * np.linalg.norm(m)
    return Dipole(tuple(mesh.origin + pos * h), tuple(mom), dipole.id, dipole.eccentricity)


def place_sources(
    inner_radius: float = 78.0,
    n_radii: int = 10,
    n_per_radius: int = 10,
    seed: int = 0,
    center=(0.0, 0.0, 0.0),
    d_max: float = 39.0,
    d_min: float = 0.5,
    orientation: str = "radial",
) -> list[Dipole]:
    """Random test dipoles at log-spaced distances below the innermost interface.

    Distances to the interface run from ``d_max`` down to ``d_min``.  For each
    distance ``n_per_radius`` directions are drawn uniformly on the sphere.
    ``orientation`` is ``"radial"`` (unit moment along ``x0 - center``) or
    ``"random"``.
    """
    if n_radii < 1 or n_per_radius < 1:
        raise ValidationError("n_radii and n_per_radius must be >= 1")
    if not 0 < d_min <= d_max <= inner_radius:
        raise ValidationError("need 0 < d_min <= d_max <= inner_radius")
    if orientation not in ("radial", "random"):
        raise ValidationError(f"unknown orientation {orientation!r}")
    rng = np.random.default_rng(seed)
    if n_radii == 1:
        dist = np.array([d_max])
    else:
        dist = np.geomspace(d_max, d_min, n_radii)
    center = np.asarray(center, dtype=float)
    out = []
    for k, d in enumerate(dist):
        r = inner_radius - d
        for i in range(n_per_radius):
            u = rng.normal(size=3)
            u /= np.linalg.norm(u)
            if orientation == "random":
                mom = rng.normal(size=3)
                mom /= np.linalg.norm(mom)
            else:
                mom = u
            out.append(Dipole(tuple(center + r * u), tuple(mom), k * n_per_radius + i, float(r / inner_radius)))
    return out


def write_dipoles(dipoles, path, header_line: str | None = None) -> None:
    """CSV with header ``id,x,y,z,mx,my,mz``, optionally preceded by a ``#`` line."""
    with open(path, "w") as fh:
        if header_line:
            fh.write(header_line.rstrip("\n") + "\n")
        fh.write("id,x,y,z,mx,my,mz\n")
        for d in dipoles:
            vals = [*d.position, *d.moment]
            fh.write(f"{d.id}," + ",".join(f"{v + 0.0:.17g}" for v in vals) + "\n")


def read_dipoles(path) -> list[Dipole]:
    import csv

    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["id", "x", "y", "z", "mx", "my", "mz"]:
            raise ValidationError(f"{path}: expected header id,x,y,z,mx,my,mz")
        for row in reader:
            try:
                out.append(
                    Dipole(
                        (float(row["x"]), float(row["y"]), float(row["z"])),
                        (float(row["mx"]), float(row["my"]), float(row["mz"])),
                        int(row["id"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{path}: bad row {row} ({exc})") from None
    return out
