"""Conforming trilinear FEM on the same hexahedral meshes, for comparison.

Unknowns are the potentials at the vertices of labeled elements.  The dipole
enters through partial integration, ``b_i = <m, grad phi_i(x0)>``, which only
touches the eight vertices of the containing element.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import PlacementError, ValidationError
from .hexmesh import HexMesh, _CORNERS
from .krylov import deflated_pcg
from .sources import Dipole

__all__ = [
    "NodalSystem",
    "assemble_stiffness",
    "element_current",
    "interpolate_nodal",
    "reference_stiffness",
    "rhs_partial_integration",
    "solve_nodal",
]


def _shape_gradients(s: np.ndarray) -> np.ndarray:
    """Gradients (8, 3) of the unit-cube trilinear shape functions at local point ``s``."""
    f = np.where(_CORNERS == 1, s, 1.0 - s)  # (8, 3) one-dimensional factors
    df = np.where(_CORNERS == 1, 1.0, -1.0)
    g = np.empty((8, 3))
    g[:, 0] = df[:, 0] * f[:, 1] * f[:, 2]
    g[:, 1] = f[:, 0] * df[:, 1] * f[:, 2]
    g[:, 2] = f[:, 0] * f[:, 1] * df[:, 2]
    return g


def reference_stiffness() -> np.ndarray:
    """8x8 stiffness of the unit cube with unit conductivity (2-point Gauss per axis)."""
    q = 0.5 + np.array([-1.0, 1.0]) / (2.0 * np.sqrt(3.0))
    K = np.zeros((8, 8))
    for x in q:
        for y in q:
            for z in q:
                g = _shape_gradients(np.array([x, y, z]))
                K += 0.125 * g @ g.T
    return K


_KREF = reference_stiffness()


@dataclass(eq=False)
class NodalSystem:
    """Stiffness matrix over the vertices of labeled elements (S/m x mm)."""

    K: sp.csr_matrix
    vertex_coords: np.ndarray
    sigma: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_vertices(self) -> int:
        return self.K.shape[0]


def assemble_stiffness(mesh: HexMesh, table) -> NodalSystem:
    """Sum of scaled reference element matrices; ``table`` as in :func:`assemble_A`."""
    from .assembly import element_sigma

    sigma = element_sigma(mesh, table)
    ev = mesh.element_vertices.astype(np.int32)
    scale = sigma * mesh.spacing
    rows = np.repeat(ev, 8, axis=1).ravel()
    cols = np.tile(ev, (1, 8)).ravel()
    vals = (scale[:, None] * _KREF.ravel()[None, :]).ravel()
    n = mesh.n_vertices
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return NodalSystem(K, mesh.vertex_coords, sigma)


def rhs_partial_integration(dipole: Dipole, mesh: HexMesh) -> np.ndarray:
    """Nodal load ``<m, grad phi_i(x0)>`` on the vertices of the source element."""
    e = int(mesh.locate(dipole.x0)[0])
    if e < 0:
        raise PlacementError(f"dipole {dipole.id} at {dipole.position} lies outside the labeled domain")
    lo = mesh.origin + mesh.element_ijk[e] * mesh.spacing
    s = (dipole.x0 - lo) / mesh.spacing
    g = _shape_gradients(s) / mesh.spacing
    load = np.zeros(mesh.n_vertices)
    np.add.at(load, mesh.element_vertices[e], g @ dipole.m)
    return load


def _nodal_preconditioner(system: NodalSystem, kind: str):
    key = ("precond", kind)
    if key not in system.cache:
        if kind == "jacobi":
            d = system.K.diagonal()
            system.cache[key] = lambda r: r / d
        elif kind == "amg":
            from .solver import amg_vcycle

            system.cache[key] = amg_vcycle(system.K)
        else:
            raise ValidationError(f"unknown nodal preconditioner {kind!r}")
    return system.cache[key]


def solve_nodal(
    system: NodalSystem, load: np.ndarray, tol: float = 1e-8, precond: str = "jacobi", max_iter: int = 20000
) -> np.ndarray:
    """Mean-zero vertex potential solving ``K u = load`` (deflated PCG)."""
    if precond not in ("jacobi", "amg"):
        raise ValidationError(f"unknown nodal preconditioner {precond!r}")
    load = np.asarray(load, dtype=float)
    if load.shape != (system.n_vertices,):
        raise ValidationError("load length does not match the number of vertices")
    nl = np.linalg.norm(load)
    if nl > 0 and abs(load.sum()) > 1e-10 * np.abs(load).sum():
        raise ValidationError("load is not compatible with the pure Neumann problem (nonzero sum)")
    if nl == 0:
        return np.zeros(system.n_vertices)
    u, _, _, _ = deflated_pcg(
        lambda v: system.K @ v, load, _nodal_preconditioner(system, precond), tol=tol, max_iter=max_iter
    )
    return u


def element_current(u: np.ndarray, mesh: HexMesh, table) -> np.ndarray:
    """``-sigma grad u`` at element centers, shape (n_elements, 3)."""
    from .assembly import element_sigma

    sigma = element_sigma(mesh, table)
    ue = np.asarray(u)[mesh.element_vertices]  # (n, 8)
    g = _shape_gradients(np.full(3, 0.5)) / mesh.spacing  # (8, 3)
    return -sigma[:, None] * (ue @ g)


def interpolate_nodal(mesh: HexMesh, u: np.ndarray, elements, points) -> np.ndarray:
    """Trilinear interpolant of ``u`` in ``elements`` at ``points`` (clamped into each element)."""
    elements = np.asarray(elements, dtype=np.int64)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lo = mesh.origin + mesh.element_ijk[elements] * mesh.spacing
    s = np.clip((pts - lo) / mesh.spacing, 0.0, 1.0)  # (n, 3)
    f = np.where(_CORNERS[None, :, :] == 1, s[:, None, :], 1.0 - s[:, None, :]).prod(axis=2)  # (n, 8)
    return np.einsum("nc,nc->n", f, np.asarray(u)[mesh.element_vertices[elements]])
