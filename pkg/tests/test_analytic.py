import numpy as np
import pytest

from hdivfwd.analytic import (
    LayeredSphere,
    SeriesConfig,
    fibonacci_sphere,
    homogeneous_sphere_potential,
    interface_residuals,
    layer_coefficients,
    surface_potential,
)
from hdivfwd.errors import ValidationError

FOUR = LayeredSphere.four_layer()
PTS = fibonacci_sphere(400, 92.0)


def test_centered_dipole_closed_form():
    # dipole at the center of a homogeneous sphere: 3 m.rhat / (4 pi sigma R^2)
    m = np.array([0.3, -0.2, 1.0])
    pts = fibonacci_sphere(50, 10.0)
    want = 3 * (pts / 10.0) @ m / (4 * np.pi * 0.5 * 100.0)
    got = surface_potential(LayeredSphere((10.0,), (0.5,)), (0, 0, 0), m, pts)
    np.testing.assert_allclose(got, want, rtol=1e-12)
    np.testing.assert_allclose(homogeneous_sphere_potential(10.0, 0.5, (0, 0, 0), m, pts), want, rtol=1e-12)


@pytest.mark.parametrize("ecc", [0.1, 0.5, 0.9, 0.97])
def test_series_matches_closed_form_homogeneous(ecc):
    x0 = ecc * 78.0 * np.array([0.6, 0.0, 0.8])
    m = np.array([1.0, 0.5, -0.3])
    ref = homogeneous_sphere_potential(92.0, 0.33, x0, m, PTS)
    cfg = SeriesConfig(max_terms=2000, tail_tol=1e-12)
    for model in (LayeredSphere((92.0,), (0.33,)), LayeredSphere((78.0, 80.0, 86.0, 92.0), (0.33,) * 4)):
        got = surface_potential(model, x0, m, PTS, cfg)
        assert np.abs(got - ref).max() < 1e-8 * np.abs(ref).max()


@pytest.mark.parametrize("n", [1, 2, 5, 20, 50, 100, 200])
def test_interface_conditions(n):
    assert interface_residuals(FOUR, n).max() < 1e-10
    assert np.isfinite(layer_coefficients(FOUR, n)).all()


def test_outer_boundary_has_no_flux():
    for n in (1, 7, 40):
        a, b = layer_coefficients(FOUR, n)[-1]
        rho = 86.0 / 92.0
        assert abs(n * a - (n + 1) * b * rho ** (n + 1)) < 1e-12 * max(abs(n * a), 1e-300)


def test_radial_dipole_is_axially_symmetric():
    x0 = np.array([0, 0, 60.0])
    theta = 0.7
    phis = np.linspace(0, 2 * np.pi, 9)
    pts = 92.0 * np.stack([np.sin(theta) * np.cos(phis), np.sin(theta) * np.sin(phis), np.full(9, np.cos(theta))], 1)
    v = surface_potential(FOUR, x0, (0, 0, 1), pts)
    np.testing.assert_allclose(v, v[0], rtol=1e-12)


def test_surface_mean_is_zero_and_linearity():
    pts = fibonacci_sphere(1000, 92.0)
    x0 = (10.0, -20.0, 40.0)
    v1 = surface_potential(FOUR, x0, (1, 0, 0), pts)
    v2 = surface_potential(FOUR, x0, (0, 1, 0), pts)
    v = surface_potential(FOUR, x0, (2, -3, 0), pts)
    np.testing.assert_allclose(v, 2 * v1 - 3 * v2, atol=1e-7 * np.abs(v).max())
    assert abs(v.mean()) < 1e-3 * np.abs(v).max()


def test_conductivity_scaling_and_translation():
    x0 = np.array([5.0, 30.0, -20.0])
    v = surface_potential(FOUR, x0, (0, 1, 1), PTS)
    np.testing.assert_allclose(surface_potential(FOUR.scaled(4.0), x0, (0, 1, 1), PTS), v / 4, rtol=1e-12)
    c = np.array([100.0, -7.0, 3.0])
    moved = LayeredSphere(FOUR.radii, FOUR.sigmas, tuple(c))
    np.testing.assert_allclose(surface_potential(moved, x0 + c, (0, 1, 1), PTS + c), v, rtol=1e-9, atol=1e-12)


def test_skull_attenuates_potential():
    x0 = (0, 0, 50.0)
    v_layered = surface_potential(FOUR, x0, (0, 0, 1), PTS)
    v_homog = homogeneous_sphere_potential(92.0, 0.33, x0, (0, 0, 1), PTS)
    assert np.abs(v_layered).max() < 0.5 * np.abs(v_homog).max()


def test_non_convergence_warns():
    with pytest.warns(RuntimeWarning, match="not converged"):
        surface_potential(FOUR, (0, 0, 77.0), (0, 0, 1), PTS[:5], SeriesConfig(max_terms=3))


def test_validation():
    with pytest.raises(ValidationError):
        surface_potential(FOUR, (0, 0, 78.0), (0, 0, 1), PTS)
    with pytest.raises(ValidationError):
        surface_potential(FOUR, (0, 0, 0), (0, 0, 1), [[0, 0, 95.0]])
    with pytest.raises(ValidationError):
        LayeredSphere((2.0, 1.0), (1.0, 1.0))
    with pytest.raises(ValidationError):
        LayeredSphere((1.0,), (0.0,))
    with pytest.raises(ValidationError):
        LayeredSphere((1.0, 2.0), (1.0,))
    with pytest.raises(ValidationError):
        SeriesConfig(max_terms=0)
    with pytest.raises(ValidationError):
        layer_coefficients(FOUR, 0)
    with pytest.raises(ValidationError):
        fibonacci_sphere(0, 1.0)


def test_fibonacci_points():
    p = fibonacci_sphere(1000, 3.0, (1, 2, 3))
    np.testing.assert_allclose(np.linalg.norm(p - [1, 2, 3], axis=1), 3.0)
    np.testing.assert_allclose(p.mean(axis=0), [1, 2, 3], atol=5e-3)
