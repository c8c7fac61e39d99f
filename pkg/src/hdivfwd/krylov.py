"""Preconditioned conjugate gradients with constant-vector deflation."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import SolverError

Operator = Callable[[np.ndarray], np.ndarray]


def deflated_pcg(
    matvec: Operator,
    b: np.ndarray,
    precond: Operator | None = None,
    tol: float = 1e-8,
    max_iter: int = 5000,
    deflate: bool = True,
    flexible: bool = False,
    recompute_every: int = 50,
) -> tuple[np.ndarray, int, float, list]:
    """Solve a symmetric positive semidefinite system whose kernel is the constants.

    With ``deflate`` the right-hand side, the preconditioned residuals and the
    result are projected to mean zero.  ``flexible`` switches to the
    Polak-Ribiere update, needed when ``matvec`` or ``precond`` are not fixed
    linear maps.  The residual is recomputed from scratch every
    ``recompute_every`` iterations and once more before convergence is
    accepted; in flexible mode the search direction restarts after each
    recomputation.

    Returns ``(x, iterations, relative_residual, history)``.
    """
    b = np.asarray(b, dtype=float)
    if deflate:
        b = b - b.mean()
    nb = np.linalg.norm(b)
    x = np.zeros_like(b)
    if nb == 0:
        return x, 0, 0.0, []

    def project(v):
        return v - v.mean() if deflate else v

    M = precond if precond is not None else (lambda r: r.copy())
    r = b.copy()
    z = project(M(r))
    p = z.copy()
    rz = r @ z
    history = [1.0]
    for it in range(1, max_iter + 1):
        q = matvec(p)
        pq = p @ q
        if not pq > 0:
            raise SolverError(f"CG lost positivity at iteration {it}", history)
        alpha = rz / pq
        x += alpha * p
        r_old = r
        r = r - alpha * q
        fresh = it % recompute_every == 0
        if fresh:
            r = b - matvec(x)
        res = np.linalg.norm(r) / nb
        if res <= tol and not fresh:
            r = b - matvec(x)
            res = np.linalg.norm(r) / nb
            fresh = True
        history.append(res)
        if res <= tol:
            return project(x), it, res, history
        z = project(M(r))
        rz_new = r @ z
        if flexible and fresh:
            beta = 0.0
        else:
            beta = (z @ (r - r_old)) / rz if flexible else rz_new / rz
        p = z + beta * p
        rz = rz_new
    raise SolverError(
        f"CG did not reach tol {tol:g} in {max_iter} iterations (residual {history[-1]:.3e})", history
    )
