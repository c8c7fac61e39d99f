import numpy as np
import pytest
import scipy.io

from hdivfwd.assembly import assemble_A, assemble_B, assemble_system, eliminate_boundary, export_matrix_market
from hdivfwd.errors import ValidationError
from hdivfwd.hexmesh import CompartmentTable, HexMesh
from hdivfwd.sources import rt0_eval

from conftest import box_mesh, unit_table


def gauss_mass(mesh, sigma, fi, fj, npts=3):
    """Mass entry by tensor Gauss quadrature over the elements adjacent to face ``fi``."""
    t = mesh.topology
    x, w = np.polynomial.legendre.leggauss(npts)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    total = 0.0
    h = mesh.spacing
    for e in (t.minus[fi], t.plus[fi]):
        if e < 0:
            continue
        lo = mesh.origin + mesh.element_ijk[e] * h
        for a, wa in zip(x, w):
            for b, wb in zip(x, w):
                for c, wc in zip(x, w):
                    # nudge inside the element so the evaluation picks this cell
                    p = lo + h * np.clip([a, b, c], 1e-9, 1 - 1e-9)
                    wi = rt0_eval(mesh, fi, p)
                    wj = rt0_eval(mesh, fj, p)
                    total += wa * wb * wc * h**3 * (wi @ wj) / sigma[e]
    return total


def test_mass_entries_unit_cube():
    m = box_mesh(3, 1, 1)
    A = assemble_A(m, unit_table())
    t = m.topology
    f_int = np.flatnonzero(t.interior)
    assert np.isclose(A[f_int[0], f_int[0]], 2.0 / 3.0)
    # the two x-faces of the middle element
    assert np.isclose(A[f_int[0], f_int[1]], 1.0 / 6.0)
    # perpendicular faces never couple
    ax = t.axis
    rows, cols = A.nonzero()
    assert np.all(ax[rows] == ax[cols])


def test_mass_matches_quadrature():
    rng = np.random.default_rng(1)
    labels = np.ones((3, 2, 2), dtype=np.uint8)
    labels[1, 1, 1] = 2
    m = HexMesh(labels.shape, 1.7, (0.3, -1.0, 2.0), labels)
    table = CompartmentTable({1: ("a", 0.33), 2: ("b", 1.79)})
    sigma = table.element_sigma(m)
    A = assemble_A(m, table).toarray()
    for _ in range(12):
        i, j = rng.integers(0, m.topology.n_faces, 2)
        ref = gauss_mass(m, sigma, i, j)
        assert A[i, j] == pytest.approx(ref, rel=1e-12, abs=1e-14 * m.spacing**3)
    for i in range(m.topology.n_faces):
        assert A[i, i] == pytest.approx(gauss_mass(m, sigma, i, i), rel=1e-12)


def test_divergence_signs_and_flux():
    m = box_mesh(2, 1, 1, h=2.0)
    B = assemble_B(m).toarray()
    f = np.flatnonzero(m.topology.interior)[0]
    assert B[0, f] == 4.0 and B[1, f] == -4.0
    # each element has six faces with |entry| = h^2
    assert np.allclose(np.abs(B).sum(axis=1), 6 * 4.0)


def test_channel_flux_telescopes():
    m = box_mesh(3, 1, 1)
    B = assemble_B(m)
    ones_x = (m.topology.axis == 0).astype(float)
    div = B @ ones_x
    assert div[1] == 0.0


def test_two_cell_elimination():
    m = box_mesh(2, 1, 1, h=2.0)
    s = assemble_system(m, unit_table(0.5))
    assert s.A.shape == (1, 1)
    assert s.A[0, 0] == pytest.approx(2 * 8.0 / (3 * 0.5))
    np.testing.assert_array_equal(s.B.toarray().ravel(), [4.0, -4.0])


def test_single_cell_degenerate():
    s = assemble_system(box_mesh(1, 1, 1), unit_table())
    assert s.degenerate and s.n_faces == 0 and s.n_elements == 1


def test_cube_system_size_and_structure():
    s = assemble_system(box_mesh(3, 3, 3), unit_table())
    assert s.A.shape == (54, 54)
    assert np.abs(s.A - s.A.T).max() == 0
    assert np.all(np.diff(s.A.indptr) <= 3)
    colnnz = np.diff(s.B.tocsc().indptr)
    assert np.all(colnnz == 2)
    assert np.allclose(np.ones(s.n_elements) @ s.B, 0.0)
    Bd = s.B.toarray()
    assert np.all(Bd.max(axis=0) == 1.0) and np.all(Bd.min(axis=0) == -1.0)


def test_mass_positive_definite():
    labels = np.ones((4, 3, 3), dtype=np.uint8)
    labels[2:] = 2
    m = HexMesh(labels.shape, 1.0, (0, 0, 0), labels)
    s = assemble_system(m, CompartmentTable({1: ("a", 0.01), 2: ("b", 1.79)}))
    X = np.random.default_rng(0).normal(size=(1000, s.n_faces))
    q = np.einsum("ij,ij->i", X @ s.A.toarray(), X)
    assert np.all(q > 0)
    assert np.linalg.eigvalsh(s.A.toarray()).min() > 0


def test_conductivity_scaling():
    m = box_mesh(3, 2, 2)
    s1 = assemble_system(m, unit_table(0.5))
    s2 = assemble_system(m, unit_table(0.5 * 7.0))
    np.testing.assert_allclose(s2.A.toarray(), s1.A.toarray() / 7.0, rtol=1e-15)
    assert (s1.B != s2.B).nnz == 0


def test_sigma_validation():
    m = box_mesh(2, 1, 1)
    with pytest.raises(ValidationError):
        assemble_A(m, np.array([1.0, -1.0]))
    with pytest.raises(ValidationError):
        assemble_A(m, np.array([1.0]))


def test_eliminate_without_sigma():
    m = box_mesh(2, 2, 1)
    s = eliminate_boundary(m, assemble_A(m, unit_table()), assemble_B(m))
    assert s.n_faces == m.topology.n_interior
    assert np.isnan(s.sigma).all()


def test_matrix_market_round_trip(tmp_path):
    s = assemble_system(box_mesh(3, 2, 2), unit_table(0.33))
    pa, pb = export_matrix_market(s, tmp_path)
    A = scipy.io.mmread(pa).toarray()
    B = scipy.io.mmread(pb).toarray()
    np.testing.assert_array_equal(A, s.A.toarray())
    np.testing.assert_array_equal(B, s.B.toarray())
