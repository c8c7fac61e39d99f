"""Reference potentials for a current dipole in concentric spheres.

The potential of a unit point source at radius ``r0`` in the innermost layer
is expanded in Legendre polynomials.  For each degree ``n`` the radial part in
layer ``k`` is written in powers normalized to the layer radii,

    alpha_k (r / R_k)^n + beta_k (R_{k-1} / r)^(n+1)

(with ``R_0 := R_1``), so that no term exceeds one inside its layer.  The
singular coefficient of the innermost layer is the free-space source term;
the others follow from continuity of ``u`` and ``sigma du/dr`` at each
interface and zero normal current at the outer surface.  The dipole field is
the gradient of the point-source series with respect to the source position.

:func:`homogeneous_sphere_potential` is a closed-form expression for a single
homogeneous sphere, independent of the series code.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = [
    "LayeredSphere",
    "SeriesConfig",
    "fibonacci_sphere",
    "homogeneous_sphere_potential",
    "interface_residuals",
    "layer_coefficients",
    "surface_potential",
]


@dataclass(frozen=True)
class LayeredSphere:
    """Concentric layers; ``radii`` innermost first (mm), ``sigmas`` in S/m."""

    radii: tuple
    sigmas: tuple
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        sigmas = tuple(float(s) for s in self.sigmas)
        if len(radii) != len(sigmas) or not radii:
            raise ValidationError("need one conductivity per layer")
        if radii[0] <= 0 or any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValidationError(f"radii must be positive and increasing, got {radii}")
        if min(sigmas) <= 0:
            raise ValidationError("conductivities must be positive")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def four_layer(cls, center=(0.0, 0.0, 0.0)) -> "LayeredSphere":
        return cls((78.0, 80.0, 86.0, 92.0), (0.33, 1.79, 0.01, 0.43), center)

    def scaled(self, c: float) -> "LayeredSphere":
        return LayeredSphere(self.radii, tuple(c * s for s in self.sigmas), self.center)


@dataclass(frozen=True)
class SeriesConfig:
    max_terms: int = 200
    tail_tol: float = 1e-8

    def __post_init__(self):
        if self.max_terms < 1:
            raise ValidationError("max_terms must be >= 1")


def _inner_radius(model: LayeredSphere, k: int) -> float:
    return model.radii[k - 1] if k > 0 else model.radii[0]


def layer_coefficients(model: LayeredSphere, n: int) -> np.ndarray:
    """Normalized ``(alpha_k, beta_k)`` per layer for degree ``n``, shape (K, 2).

    The innermost singular coefficient ``beta_0`` is 1; scale by
    ``(r0 / R_1)^n / (4 pi sigma_1 R_1)`` for a unit source at radius ``r0``.
    Computed by propagating 2x2 interface conditions inward from the
    outer boundary.
    """
    if n < 1:
        raise ValidationError("degree must be >= 1")
    R, s = model.radii, model.sigmas
    K = len(R)
    coef = np.zeros((K, 2))
    # outer surface: n alpha - (n+1) beta rho^(n+1) = 0, start with alpha = 1
    rho = _inner_radius(model, K - 1) / R[K - 1]
    coef[K - 1] = (1.0, n / ((n + 1) * rho ** (n + 1)))
    for k in range(K - 2, -1, -1):
        a1, b1 = coef[k + 1]
        q = R[k] / R[k + 1]
        # value and flux just outside R_k, in units of the layer-k basis at r = R_k
        val = a1 * q**n + b1
        flux = s[k + 1] / s[k] * (n * a1 * q**n - (n + 1) * b1)
        # inside: alpha + B = val, n alpha - (n+1) B = flux with B = beta rho^(n+1)
        alpha = ((n + 1) * val + flux) / (2 * n + 1)
        Bk = (n * val - flux) / (2 * n + 1)
        rho = _inner_radius(model, k) / R[k]
        coef[k] = (alpha, Bk / rho ** (n + 1))
        # renormalize to avoid overflow across many layers
        m = np.abs(coef[k:]).max()
        coef[k:] /= m
    return coef / coef[0, 1]


def interface_residuals(model: LayeredSphere, n: int) -> np.ndarray:
    """Relative jumps of potential and normal current at every interface, shape (K-1, 2)."""
    c = layer_coefficients(model, n)
    R, s = model.radii, model.sigmas
    out = []
    for k in range(len(R) - 1):
        rho = _inner_radius(model, k) / R[k]
        q = R[k] / R[k + 1]
        a0, b0 = c[k]
        a1, b1 = c[k + 1]
        v_in = a0 + b0 * rho ** (n + 1)
        v_out = a1 * q**n + b1
        f_in = s[k] * (n * a0 - (n + 1) * b0 * rho ** (n + 1))
        f_out = s[k + 1] * (n * a1 * q**n - (n + 1) * b1)
        out.append(
            (
                abs(v_in - v_out) / max(abs(v_in), abs(v_out), 1e-300),
                abs(f_in - f_out) / max(abs(f_in), abs(f_out), 1e-300),
            )
        )
    return np.array(out)


def _radial_values(model: LayeredSphere, coef: np.ndarray, r: np.ndarray, n: int) -> np.ndarray:
    R = np.asarray(model.radii)
    k = np.minimum(np.searchsorted(R, r - 1e-9 * R[-1]), len(R) - 1)
    inner = np.where(k > 0, R[np.maximum(k - 1, 0)], R[0])
    return coef[k, 0] * (r / R[k]) ** n + coef[k, 1] * (inner / r) ** (n + 1)


def surface_potential(
    model: LayeredSphere, x0, m, points, cfg: SeriesConfig | None = None
) -> np.ndarray:
    """Potential of dipole ``m`` at ``x0`` evaluated at ``points`` (radius >= innermost radius).

    Units follow the inputs: mm, S/m and a moment in current x mm give the
    potential in current / (S/m * mm).
    """
    cfg = cfg or SeriesConfig()
    c = np.asarray(model.center)
    x0 = np.asarray(x0, dtype=float) - c
    m = np.asarray(m, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float)) - c
    R1 = model.radii[0]
    r0 = np.linalg.norm(x0)
    if r0 >= R1:
        raise ValidationError(f"dipole radius {r0:.6g} mm not inside the innermost layer ({R1} mm)")
    r = np.linalg.norm(pts, axis=1)
    if np.any(r < R1 * (1 - 1e-12)) or np.any(r > model.radii[-1] * (1 + 1e-12)):
        raise ValidationError("evaluation points must lie between the innermost and the outer radius")
    rhat = pts / r[:, None]
    e0 = x0 / r0 if r0 > 0 else np.array([0.0, 0.0, 1.0])
    cosg = np.clip(rhat @ e0, -1.0, 1.0)
    m_r0 = m @ e0
    m_r = rhat @ m
    tang = m_r - cosg * m_r0
    t = r0 / R1
    pref = 1.0 / (4.0 * np.pi * model.sigmas[0] * R1**2)

    total = np.zeros(len(pts))
    p_prev, p_cur = np.ones_like(cosg), cosg.copy()  # P_0, P_1
    dp_prev, dp_cur = np.zeros_like(cosg), np.ones_like(cosg)  # P_0', P_1'
    scale_max = 0.0
    converged = False
    for n in range(1, cfg.max_terms + 1):
        radial = _radial_values(model, layer_coefficients(model, n), r, n)
        tn = t ** (n - 1) if n > 1 else 1.0
        term = pref * tn * radial * (n * p_cur * m_r0 + dp_cur * tang)
        total += term
        scale_max = max(scale_max, np.abs(total).max())
        if (n >= 2 and np.abs(term).max() <= cfg.tail_tol * scale_max) or tn == 0.0:
            converged = True
            break
        # Bonnet recursion and P'_{n+1} = P'_{n-1} + (2n+1) P_n
        p_next = ((2 * n + 1) * cosg * p_cur - n * p_prev) / (n + 1)
        dp_next = dp_prev + (2 * n + 1) * p_cur
        p_prev, p_cur = p_cur, p_next
        dp_prev, dp_cur = dp_cur, dp_next
    if not converged:
        warnings.warn(f"series not converged after {cfg.max_terms} terms", RuntimeWarning, stacklevel=2)
    return total


def homogeneous_sphere_potential(radius: float, sigma: float, x0, m, points) -> np.ndarray:
    """Closed-form surface potential of a dipole in a homogeneous sphere.

    Valid for points on the sphere surface ``|r| = radius`` (center at origin).
    """
    x0 = np.asarray(x0, dtype=float)
    m = np.asarray(m, dtype=float)
    r = np.atleast_2d(np.asarray(points, dtype=float))
    d = r - x0
    dn = np.linalg.norm(d, axis=1)
    rr0 = r @ x0
    denom = radius**2 - rr0 + radius * dn
    term1 = 2.0 * (d @ m) / dn**3
    term2 = ((r @ m) + radius * (d @ m) / dn) / (radius * denom)
    return (term1 + term2) / (4.0 * np.pi * sigma)


def fibonacci_sphere(n: int, radius: float, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """``n`` nearly uniform points on a sphere (golden-angle spiral)."""
    if n < 1:
        raise ValidationError("need at least one point")
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    rho = np.sqrt(1.0 - z * z)
    pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    return np.asarray(center, dtype=float) + radius * pts
