"""Sparse blocks of the RT0/P0 saddle-point system on a regular hexahedral mesh.

On a cube of edge ``h`` the lowest-order Raviart-Thomas basis function of a
face with normal ``e_a`` is ``(1 - |x_a - x_face| / h) e_a`` restricted to the
two cells sharing the face.  Inside one cell, only the two faces normal to the
same axis share a vector direction, so the mass matrix couples a face with
itself and with the opposite face of each incident cell:

* diagonal contribution per incident cell ``h^3 / (3 sigma)``,
* opposite-face coupling ``h^3 / (6 sigma)``.

The divergence block has ``+h^2`` for the cell on the minus side of a face
(the basis function points out of it) and ``-h^2`` for the plus side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import ValidationError
from .hexmesh import CompartmentTable, HexMesh

__all__ = [
    "SaddleSystem",
    "assemble_A",
    "assemble_B",
    "assemble_system",
    "element_sigma",
    "eliminate_boundary",
    "export_matrix_market",
]


def element_sigma(mesh: HexMesh, table) -> np.ndarray:
    """Per-element conductivity from a table or an array, validated positive."""
    if isinstance(table, CompartmentTable):
        sigma = table.element_sigma(mesh)
    else:
        sigma = np.asarray(table, dtype=float)
        if sigma.shape != (mesh.n_elements,):
            raise ValidationError("per-element conductivity array has wrong length")
    if not np.all(sigma > 0):
        raise ValidationError("all element conductivities must be positive")
    return sigma


def assemble_A(mesh: HexMesh, table) -> sp.csr_matrix:
    """Conductivity-weighted RT0 mass matrix over all faces.

    ``table`` is a :class:`CompartmentTable` or an array of per-element
    conductivities (S/m).  Entries are in mm^3 / (S/m).
    """
    sigma = element_sigma(mesh, table)
    h3 = mesh.spacing**3
    ef = mesh.element_faces
    c = h3 / sigma
    rows, cols, vals = [], [], []
    for a in range(3):
        lo, hi = ef[:, 2 * a], ef[:, 2 * a + 1]
        rows += [lo, hi, lo, hi]
        cols += [lo, hi, hi, lo]
        vals += [c / 3.0, c / 3.0, c / 6.0, c / 6.0]
    n = mesh.topology.n_faces
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_B(mesh: HexMesh) -> sp.csr_matrix:
    """P0 divergence matrix, shape ``(n_elements, n_faces)``, entries in mm^2."""
    h2 = mesh.spacing**2
    ne = mesh.n_elements
    ef = mesh.element_faces
    sign = np.tile([-h2, h2], 3)
    rows = np.repeat(np.arange(ne), 6)
    B = sp.csr_matrix((np.tile(sign, ne), (rows, ef.ravel())), shape=(ne, mesh.topology.n_faces))
    B.sort_indices()
    return B


@dataclass(eq=False)
class SaddleSystem:
    """Blocks ``A`` (interior faces) and ``B`` (elements x interior faces).

    ``interior_faces[c]`` is the global face id of column ``c``;
    ``face_column[f]`` maps a global face id back to its column, ``-1`` for
    eliminated boundary faces.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    interior_faces: np.ndarray
    face_column: np.ndarray
    sigma: np.ndarray
    spacing: float
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_faces(self) -> int:
        return self.A.shape[0]

    @property
    def n_elements(self) -> int:
        return self.B.shape[0]

    @property
    def degenerate(self) -> bool:
        """True when no interior face is left (e.g. a single element)."""
        return self.n_faces == 0

    @property
    def BT(self) -> sp.csr_matrix:
        if "BT" not in self.cache:
            self.cache["BT"] = self.B.T.tocsr()
        return self.cache["BT"]


def eliminate_boundary(mesh: HexMesh, A: sp.spmatrix, B: sp.spmatrix, sigma=None) -> SaddleSystem:
    """Drop boundary-face unknowns, imposing zero normal current on the boundary."""
    interior = np.flatnonzero(mesh.topology.interior)
    column = np.full(mesh.topology.n_faces, -1, dtype=np.int64)
    column[interior] = np.arange(len(interior))
    A_int = sp.csr_matrix(A)[interior][:, interior].tocsr()
    B_int = sp.csr_matrix(B)[:, interior].tocsr()
    A_int.sort_indices()
    B_int.sort_indices()
    if sigma is None:
        # unknown; only the direct right-hand side needs it
        sigma = np.full(mesh.n_elements, np.nan)
    return SaddleSystem(A_int, B_int, interior, column, np.asarray(sigma, dtype=float), mesh.spacing)


def assemble_system(mesh: HexMesh, table) -> SaddleSystem:
    """Assemble ``A`` and ``B`` and eliminate boundary faces in one call."""
    sigma = element_sigma(mesh, table)
    return eliminate_boundary(mesh, assemble_A(mesh, sigma), assemble_B(mesh), sigma)


def export_matrix_market(system: SaddleSystem, directory) -> tuple[Path, Path]:
    """Write ``A.mtx`` (symmetric) and ``B.mtx`` (general) into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    pa, pb = d / "A.mtx", d / "B.mtx"
    scipy.io.mmwrite(pa, system.A.tocoo(), symmetry="symmetric", precision=17)
    scipy.io.mmwrite(pb, system.B.tocoo(), symmetry="general", precision=17)
    return pa, pb
