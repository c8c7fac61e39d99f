"""Schur-complement solver for the RT0/P0 saddle-point system.

The block system ``[[A, B^T], [B, 0]] [j; u] = [b; 0]`` is reduced to the
element-space problem ``S u = h`` with ``S = B A^{-1} B^T``.  ``S`` is never
formed: every application solves with ``A``.  On a regular grid ``A`` only
couples faces along grid lines, so after a reverse Cuthill-McKee permutation
it is tridiagonal and a banded Cholesky factorization gives ``A^{-1}`` exactly
at O(n) cost (the ``"line"`` inner solver).  The ``"cg"`` inner solver runs a
fixed number of Jacobi-preconditioned CG steps instead.

The outer iteration is preconditioned CG on ``S`` with the constant vector
deflated.  The preconditioner approximates the inverse of
``P = B D^{-1} B^T`` where ``D`` is a diagonal surrogate of ``A`` (row
2-norm by default).

Sign convention: the block system carries ``+B^T``, so its potential unknown
``u`` is the negative of the physical potential.  :attr:`Solution.potential`
returns the physical sign.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .assembly import SaddleSystem
from .errors import SolverError, ValidationError
from .krylov import deflated_pcg
from .sources import RhsSpec

log = logging.getLogger(__name__)

__all__ = [
    "LineSolver",
    "Preconditioner",
    "Solution",
    "SolverConfig",
    "TransferMatrix",
    "apply_A_inverse",
    "build_preconditioner",
    "line_solver",
    "schur_apply",
    "sensor_restriction",
    "solve_potential",
    "solve_schur",
    "transfer_solve",
]

PRECONDITIONERS = ("none", "ssor", "amg")
D_VARIANTS = ("l2", "diag", "rowsum", "l1")


@dataclass
class SolverConfig:
    """Outer/inner iteration settings.

    ``inner`` selects how ``A^{-1}`` is applied inside ``S``: ``"line"`` is
    the exact line factorization, ``"cg"`` uses ``inner_iters`` Jacobi-CG
    steps (or iterates to ``inner_tol`` when ``inner_iters`` is None).
    """

    outer_tol: float = 1e-8
    outer_max_iter: int = 5000
    inner: str = "line"
    inner_iters: int | None = 1
    inner_tol: float = 1e-10
    precond: str = "amg"
    d_variant: str = "l2"
    ssor_sweeps: int = 1
    deflate_constants: bool = True
    recompute_every: int = 50
    log_convergence: bool = False

    def __post_init__(self):
        for name in ("outer_tol", "inner_tol"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValidationError(f"{name} must lie in (0, 1), got {v}")
        if self.inner not in ("line", "cg"):
            raise ValidationError(f"inner must be 'line' or 'cg', got {self.inner!r}")
        if self.inner_iters is not None and self.inner_iters < 1:
            raise ValidationError("inner_iters must be >= 1")
        if self.precond not in PRECONDITIONERS:
            raise ValidationError(f"precond must be one of {PRECONDITIONERS}, got {self.precond!r}")
        if self.d_variant not in D_VARIANTS:
            raise ValidationError(f"d_variant must be one of {D_VARIANTS}, got {self.d_variant!r}")
        if self.ssor_sweeps < 1 or self.outer_max_iter < 1 or self.recompute_every < 1:
            raise ValidationError("ssor_sweeps, outer_max_iter and recompute_every must be >= 1")

    @property
    def inner_is_linear(self) -> bool:
        return self.inner == "line"


@dataclass(eq=False)
class Solution:
    """Result of a potential solve.

    ``u`` solves the block system as written (mean zero), ``j`` holds the
    interior-face current coefficients (normal current density at each face).
    """

    u: np.ndarray
    j: np.ndarray
    iterations: int
    residual: float
    history: list = field(default_factory=list, repr=False)
    wall_time: float = 0.0

    @property
    def potential(self) -> np.ndarray:
        """Physical potential per element (``-u``)."""
        return -self.u


# -- inner solves -------------------------------------------------------------


class LineSolver:
    """Exact ``A^{-1}`` for matrices whose graph is a union of paths."""

    def __init__(self, A: sp.spmatrix):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        self.n = n
        if n == 0:
            self.perm = np.zeros(0, dtype=np.int64)
            return
        perm = reverse_cuthill_mckee(A, symmetric_mode=True).astype(np.int64)
        Ap = A[perm][:, perm].tocsr()
        diag = Ap.diagonal()
        off = Ap.diagonal(1)
        if Ap.nnz != n + 2 * np.count_nonzero(off):
            raise ValidationError("matrix is not tridiagonal along grid lines")
        ab = np.zeros((2, n))
        ab[0] = diag
        ab[1, :-1] = off
        try:
            self.factor = scipy.linalg.cholesky_banded(ab, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"face mass matrix is not positive definite: {exc}") from None
        self.perm = perm
        self.inv = np.empty_like(perm)
        self.inv[perm] = np.arange(n)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        if self.n == 0:
            return np.zeros_like(y, dtype=float)
        x = scipy.linalg.cho_solve_banded((self.factor, True), y[self.perm], check_finite=False)
        return x[self.inv]


def line_solver(system: SaddleSystem) -> LineSolver:
    """Cached :class:`LineSolver` for ``system.A``."""
    if "line" not in system.cache:
        system.cache["line"] = LineSolver(system.A)
    return system.cache["line"]


def _jacobi_cg(A, y, iters, tol):
    d = A.diagonal()
    x = np.zeros_like(y)
    r = y.copy()
    ny = np.linalg.norm(y)
    if ny == 0:
        return x
    z = r / d
    p = z.copy()
    rz = r @ z
    k = 0
    while True:
        q = A @ p
        alpha = rz / (p @ q)
        x += alpha * p
        r -= alpha * q
        k += 1
        if iters is not None and k >= iters:
            break
        if np.linalg.norm(r) <= tol * ny:
            break
        if k > 10 * len(y):
            raise SolverError("inner CG on A did not converge")
        z = r / d
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x


def apply_A_inverse(system: SaddleSystem, y: np.ndarray, config: SolverConfig | None = None) -> np.ndarray:
    """Approximate ``A^{-1} y`` according to ``config.inner``."""
    config = config or SolverConfig()
    y = np.asarray(y, dtype=float)
    if config.inner == "line":
        return line_solver(system)(y)
    return _jacobi_cg(system.A, y, config.inner_iters, config.inner_tol)


def schur_apply(system: SaddleSystem, v: np.ndarray, config: SolverConfig | None = None) -> np.ndarray:
    """``B A^{-1} B^T v``."""
    return system.B @ apply_A_inverse(system, system.BT @ v, config)


# -- outer preconditioner -----------------------------------------------------


def diagonal_surrogate(A: sp.spmatrix, variant: str = "l2") -> np.ndarray:
    """Diagonal approximation of ``A``: row 2-norm, diagonal, row sum or row 1-norm."""
    A = sp.csr_matrix(A)
    if variant == "l2":
        d = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    elif variant == "diag":
        d = A.diagonal()
    elif variant == "rowsum":
        d = np.asarray(A.sum(axis=1)).ravel()
    elif variant == "l1":
        d = np.asarray(abs(A).sum(axis=1)).ravel()
    else:
        raise ValidationError(f"unknown D variant {variant!r}")
    if np.any(d <= 0):
        raise ValidationError("A has a zero (or non-positive) row; cannot build the preconditioner")
    return d


@dataclass(eq=False)
class Preconditioner:
    """Fixed symmetric approximation of ``P^{-1}``, ``P = B D^{-1} B^T``."""

    kind: str
    P: sp.csr_matrix | None
    D: np.ndarray | None
    apply: Callable[[np.ndarray], np.ndarray]

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.apply(r)


def build_preconditioner(
    system: SaddleSystem, kind: str = "ssor", d_variant: str = "l2", sweeps: int = 1
) -> Preconditioner:
    """Build the outer preconditioner.

    ``kind`` is ``"none"``, ``"ssor"`` (``sweeps`` symmetric Gauss-Seidel
    sweeps on ``P`` from a zero guess) or ``"amg"`` (one smoothed-aggregation
    V-cycle on ``P``).
    """
    if kind not in PRECONDITIONERS:
        raise ValidationError(f"unknown preconditioner {kind!r}")
    if kind == "none":
        return Preconditioner("none", None, None, lambda r: r.copy())
    D = diagonal_surrogate(system.A, d_variant)
    P = (system.B @ sp.diags(1.0 / D) @ system.BT).tocsr()
    P.sum_duplicates()
    P.sort_indices()
    if kind == "ssor":
        from pyamg.relaxation.relaxation import gauss_seidel

        def apply(r):
            x = np.zeros_like(r)
            gauss_seidel(P, x, r, iterations=sweeps, sweep="symmetric")
            return x

    else:
        apply = amg_vcycle(P)
    return Preconditioner(kind, P, D, apply)


def amg_vcycle(P: sp.csr_matrix) -> Callable[[np.ndarray], np.ndarray]:
    """One symmetric smoothed-aggregation V-cycle for a singular Neumann-type matrix."""
    import pyamg

    smoother = ("gauss_seidel", {"sweep": "symmetric"})
    # pyamg estimates spectral radii from np.random; pin it for reproducible hierarchies
    state = np.random.get_state()
    np.random.seed(0)
    try:
        ml = pyamg.smoothed_aggregation_solver(
            P,
            B=np.ones((P.shape[0], 1)),
            symmetry="hermitian",
            max_coarse=500,
            presmoother=smoother,
            postsmoother=smoother,
        )
    finally:
        np.random.set_state(state)
    # pyamg keeps coarse operators as 1x1-block BSR; CSR relaxation is much faster
    for level in ml.levels:
        level.A = level.A.tocsr()
        if hasattr(level, "P"):
            level.P = level.P.tocsr()
            level.R = level.R.tocsr()
    M = ml.aspreconditioner(cycle="V")
    return lambda r: M @ r


def _preconditioner(system: SaddleSystem, config: SolverConfig) -> Preconditioner:
    key = ("precond", config.precond, config.d_variant, config.ssor_sweeps)
    if key not in system.cache:
        system.cache[key] = build_preconditioner(system, config.precond, config.d_variant, config.ssor_sweeps)
    return system.cache[key]


# -- outer iteration ----------------------------------------------------------


def _check_compatible(h: np.ndarray) -> None:
    nh = np.linalg.norm(h)
    if nh > 0 and abs(h.mean()) > 1e-12 * nh:
        raise ValidationError(f"incompatible right-hand side: mean {h.mean():.3e} vs norm {nh:.3e}")


def solve_schur(
    system: SaddleSystem, h: np.ndarray, config: SolverConfig | None = None
) -> tuple[np.ndarray, int, float, list]:
    """Solve ``S u = h`` by deflated PCG; returns ``(u, iterations, rel_residual, history)``."""
    config = config or SolverConfig()
    h = np.asarray(h, dtype=float)
    if h.shape != (system.n_elements,):
        raise ValidationError(f"rhs has shape {h.shape}, expected ({system.n_elements},)")
    _check_compatible(h)
    if not np.any(h) or system.degenerate:
        return np.zeros(system.n_elements), 0, 0.0, []
    return deflated_pcg(
        lambda v: schur_apply(system, v, config),
        h,
        _preconditioner(system, config),
        tol=config.outer_tol,
        max_iter=config.outer_max_iter,
        deflate=config.deflate_constants,
        flexible=not config.inner_is_linear,
        recompute_every=config.recompute_every,
    )


def solve_potential(system: SaddleSystem, rhs: RhsSpec, config: SolverConfig | None = None) -> Solution:
    """Solve for potential and current given a direct or projected right-hand side.

    The current is recovered with the exact line solve regardless of the
    inner setting used during the iteration.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    exact = line_solver(system)
    if rhs.kind == "direct":
        b = np.asarray(rhs.payload, dtype=float)
        if b.shape != (system.n_faces,):
            raise ValidationError("direct payload must live on interior faces")
        h = system.B @ exact(b)
    elif rhs.kind == "projected":
        h = np.asarray(rhs.payload, dtype=float)
        b = rhs.face_source
    else:
        raise ValidationError(f"unknown rhs kind {rhs.kind!r}")
    u, iters, res, history = solve_schur(system, h, config)
    vol = exact(system.BT @ u)
    if rhs.kind == "direct":
        j = exact(b) - vol
    elif b is not None:
        j = np.asarray(b, dtype=float) - vol
    else:
        j = -vol
    sol = Solution(u=u, j=j, iterations=iters, residual=res, history=history)
    sol.wall_time = time.perf_counter() - t0
    log.debug("solve %s: %d iterations, residual %.3e, %.2fs", rhs.kind, iters, res, sol.wall_time)
    return sol


# -- transfer matrix ----------------------------------------------------------


def sensor_restriction(n_elements: int, sensors, reference: int) -> np.ndarray:
    """Rows ``e_sensor - e_reference`` for each sensor element."""
    sensors = np.asarray(sensors, dtype=np.int64)
    R = np.zeros((len(sensors), n_elements))
    R[np.arange(len(sensors)), sensors] += 1.0
    R[:, reference] -= 1.0
    return R


@dataclass(eq=False)
class TransferMatrix:
    """Per-sensor solutions ``t_k`` of ``S t_k = R_k``.

    For any compatible ``h`` the sensor readings of the solution of
    ``S u = h`` are ``T @ h``.
    """

    T: np.ndarray
    iterations: list

    def apply(self, h: np.ndarray) -> np.ndarray:
        return self.T @ h

    def potentials(self, h: np.ndarray) -> np.ndarray:
        """Physical sensor potentials (sign flipped, see module docstring)."""
        return -(self.T @ h)


def transfer_solve(system: SaddleSystem, R, config: SolverConfig | None = None) -> TransferMatrix:
    """Solve ``S t_k = R_k`` for every restriction row; rows must be mean zero."""
    config = config or SolverConfig()
    R = np.atleast_2d(np.asarray(R, dtype=float))
    T = np.zeros_like(R)
    iters = []
    for k, row in enumerate(R):
        T[k], it, _, _ = solve_schur(system, row, config)
        iters.append(it)
    return TransferMatrix(T, iters)
