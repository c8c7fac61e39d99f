import numpy as np
import pytest
import scipy.sparse.linalg as spla

from hdivfwd.assembly import assemble_system
from hdivfwd.errors import SolverError, ValidationError
from hdivfwd.hexmesh import CompartmentTable, HexMesh
from hdivfwd.solver import (
    LineSolver,
    SolverConfig,
    apply_A_inverse,
    build_preconditioner,
    diagonal_surrogate,
    schur_apply,
    sensor_restriction,
    solve_potential,
    solve_schur,
    transfer_solve,
)
from hdivfwd.sources import Dipole, RhsSpec, rhs_direct, rhs_projected

from conftest import box_mesh, unit_table


def dense_saddle_solution(system, h):
    """Solve [[A, B^T, 0], [B, 0, 1], [0, 1^T, 0]] [j; u; l] = [0; h; 0] densely.

    The bordered row fixes mean(u) = 0; the block system then gives S u = h.
    """
    A = system.A.toarray()
    B = system.B.toarray()
    nf, ne = A.shape[0], B.shape[0]
    K = np.zeros((nf + ne + 1, nf + ne + 1))
    K[:nf, :nf] = A
    K[:nf, nf : nf + ne] = B.T
    K[nf : nf + ne, :nf] = B
    K[nf : nf + ne, -1] = 1.0
    K[-1, nf : nf + ne] = 1.0
    rhs = np.zeros(nf + ne + 1)
    rhs[nf : nf + ne] = -h
    x = np.linalg.solve(K, rhs)
    return x[nf : nf + ne]


@pytest.fixture(scope="module")
def cube4():
    return assemble_system(box_mesh(4, 4, 4), unit_table())


@pytest.fixture(scope="module")
def layered():
    labels = np.ones((5, 4, 4), dtype=np.uint8)
    labels[2] = 2
    labels[3:] = 3
    m = HexMesh(labels.shape, 2.0, (0, 0, 0), labels)
    table = CompartmentTable({1: ("a", 0.33), 2: ("b", 0.01), 3: ("c", 1.79)})
    return m, assemble_system(m, table)


def random_compatible(n, seed):
    h = np.random.default_rng(seed).normal(size=n)
    return h - h.mean()


def test_inverse_trivial_cases():
    s = assemble_system(box_mesh(2, 1, 1), unit_table())
    assert apply_A_inverse(s, np.array([1.0]))[0] == pytest.approx(1.5)
    assert np.all(apply_A_inverse(s, np.zeros(1)) == 0)


def test_inner_cg_converges(cube4):
    y = np.random.default_rng(0).normal(size=cube4.n_faces)
    cfg = SolverConfig(inner="cg", inner_iters=None, inner_tol=1e-12)
    x = apply_A_inverse(cube4, y, cfg)
    assert np.linalg.norm(cube4.A @ x - y) / np.linalg.norm(y) < 1e-10
    np.testing.assert_allclose(apply_A_inverse(cube4, y), x, rtol=1e-9, atol=1e-12)


def test_line_solver_matches_sparse_lu(layered):
    _, s = layered
    y = np.random.default_rng(1).normal(size=s.n_faces)
    ref = spla.spsolve(s.A.tocsc(), y)
    np.testing.assert_allclose(LineSolver(s.A)(y), ref, rtol=1e-12, atol=1e-12)


def test_line_solver_rejects_general_matrix():
    import scipy.sparse as sp

    M = sp.csr_matrix(np.array([[4.0, 1, 1], [1, 4, 1], [1, 1, 4]]))
    with pytest.raises(ValidationError):
        LineSolver(M)


def test_schur_properties(cube4):
    rng = np.random.default_rng(2)
    assert np.abs(schur_apply(cube4, np.ones(cube4.n_elements))).max() < 1e-12
    a, b = rng.normal(size=(2, cube4.n_elements))
    Sa, Sb = schur_apply(cube4, a), schur_apply(cube4, b)
    assert abs(Sa @ b - a @ Sb) <= 1e-12 * abs(Sa @ b)
    for _ in range(20):
        v = rng.normal(size=cube4.n_elements)
        assert schur_apply(cube4, v) @ v >= 0


def test_diagonal_surrogates():
    s = assemble_system(box_mesh(2, 1, 1, h=2.0), unit_table(0.5))
    for variant in ("l2", "diag", "rowsum", "l1"):
        assert diagonal_surrogate(s.A, variant)[0] == pytest.approx(2 * 8.0 / (3 * 0.5))
    with pytest.raises(ValidationError):
        diagonal_surrogate(s.A, "max")
    A = assemble_system(box_mesh(3, 1, 1), unit_table()).A
    np.testing.assert_allclose(diagonal_surrogate(A, "l2"), np.hypot(2 / 3, 1 / 6))
    np.testing.assert_allclose(diagonal_surrogate(A, "rowsum"), 2 / 3 + 1 / 6)


@pytest.mark.parametrize("kind", ["none", "ssor", "amg"])
def test_preconditioner_is_symmetric_positive(layered, kind):
    _, s = layered
    P = build_preconditioner(s, kind)
    rng = np.random.default_rng(3)
    a, b = (v - v.mean() for v in rng.normal(size=(2, s.n_elements)))
    assert abs(P(a) @ b - a @ P(b)) <= 1e-10 * np.linalg.norm(P(a)) * np.linalg.norm(b)
    assert P(a) @ a > 0


@pytest.mark.parametrize("precond", ["none", "ssor", "amg"])
@pytest.mark.parametrize("d_variant", ["l2", "diag", "rowsum", "l1"])
def test_schur_matches_dense_oracle(layered, precond, d_variant):
    _, s = layered
    h = random_compatible(s.n_elements, 4)
    u, its, res, hist = solve_schur(s, h, SolverConfig(precond=precond, d_variant=d_variant, outer_tol=1e-12))
    ref = dense_saddle_solution(s, h)
    assert np.linalg.norm(u - ref) / np.linalg.norm(ref) < 1e-8
    assert abs(u.mean()) < 1e-14 * np.abs(u).max()
    assert res <= 1e-12 and len(hist) == its + 1


def test_inexact_inner_still_converges(cube4):
    h = random_compatible(cube4.n_elements, 5)
    ref = dense_saddle_solution(cube4, h)
    for iters in (1, 3):
        u, *_ = solve_schur(cube4, h, SolverConfig(inner="cg", inner_iters=iters, outer_tol=1e-10))
        # the outer residual is measured with the perturbed operator
        assert np.linalg.norm(u - ref) / np.linalg.norm(ref) < 0.5


def test_inexact_inner_breakdown_is_reported(layered):
    _, s = layered
    h = random_compatible(s.n_elements, 5)
    try:
        solve_schur(s, h, SolverConfig(inner="cg", inner_iters=1, outer_tol=1e-10))
    except SolverError as exc:
        assert exc.history
    u, *_ = solve_schur(s, h, SolverConfig(inner="cg", inner_iters=None, inner_tol=1e-12, outer_tol=1e-10))
    ref = dense_saddle_solution(s, h)
    assert np.linalg.norm(u - ref) / np.linalg.norm(ref) < 1e-7


def test_zero_rhs_and_incompatible(cube4):
    sol = solve_potential(cube4, RhsSpec("projected", np.zeros(cube4.n_elements), 0, np.zeros(cube4.n_faces)))
    assert not sol.u.any() and not sol.j.any() and sol.iterations == 0
    with pytest.raises(ValidationError, match="incompatible"):
        solve_schur(cube4, np.ones(cube4.n_elements))
    with pytest.raises(ValidationError):
        solve_schur(cube4, np.ones(3))


def test_non_convergence_reports_history(layered):
    _, s = layered
    with pytest.raises(SolverError) as info:
        solve_schur(s, random_compatible(s.n_elements, 6), SolverConfig(precond="none", outer_max_iter=2))
    assert len(info.value.history) == 3


def test_config_validation():
    for kw in ({"outer_tol": 0}, {"outer_tol": 1.5}, {"inner": "lu"}, {"inner_iters": 0}, {"precond": "ilu"},
               {"d_variant": "max"}):
        with pytest.raises(ValidationError):
            SolverConfig(**kw)


def test_direct_conservation_and_sign(layered):
    m, s = layered
    d = Dipole((4.2, 3.9, 4.1), (1.0, 0.3, -0.2))
    rhs = rhs_direct(d, s, m)
    sol = solve_potential(s, rhs, SolverConfig(outer_tol=1e-10))
    assert np.linalg.norm(s.B @ sol.j) <= 10 * 1e-10 * np.linalg.norm(rhs.payload)
    np.testing.assert_array_equal(sol.potential, -sol.u)


def test_projected_current_conservation(layered):
    m, s = layered
    d = Dipole((4.2, 3.9, 4.1), (0.0, 0.0, 1.0))
    rhs = rhs_projected(d, s, m)
    sol = solve_potential(s, rhs, SolverConfig(outer_tol=1e-10))
    # total current j + (dipole face field) carries the sink/source pair
    np.testing.assert_allclose(s.B @ sol.j, 0.0, atol=1e-8 * np.abs(s.B @ rhs.face_source).max())


def test_gauge_invariance_of_current(layered):
    from hdivfwd.solver import line_solver

    m, s = layered
    d = Dipole((4.2, 3.9, 4.1), (1.0, 0.0, 0.0))
    rhs = rhs_projected(d, s, m)
    sol = solve_potential(s, rhs)
    lin = line_solver(s)
    j_shift = rhs.face_source - lin(s.BT @ (sol.u + 3.7))
    np.testing.assert_allclose(j_shift, sol.j, rtol=1e-12, atol=1e-14 * np.abs(sol.j).max())


def test_solution_linearity(layered):
    _, s = layered
    h1, h2 = random_compatible(s.n_elements, 7), random_compatible(s.n_elements, 8)
    cfg = SolverConfig(outer_tol=1e-12)
    u1 = solve_schur(s, h1, cfg)[0]
    u2 = solve_schur(s, h2, cfg)[0]
    u = solve_schur(s, 2 * h1 - 0.5 * h2, cfg)[0]
    np.testing.assert_allclose(u, 2 * u1 - 0.5 * u2, atol=1e-9 * np.abs(u).max())


def test_direct_and_projected_agree_for_far_field(layered):
    m, s = layered
    d = Dipole((4.0, 4.0, 4.0), (0.0, 0.0, 1.0))
    ud = solve_potential(s, rhs_direct(d, s, m)).potential
    up = solve_potential(s, rhs_projected(d, s, m)).potential
    far = np.linalg.norm(m.element_centers - d.x0, axis=1) > 5.0
    assert np.corrcoef(ud[far], up[far])[0, 1] > 0.99


def test_transfer_reciprocity(layered):
    m, s = layered
    sensors = [0, 5, 17, s.n_elements - 1]
    R = sensor_restriction(s.n_elements, sensors, reference=sensors[0])
    cfg = SolverConfig(outer_tol=1e-12)
    tm = transfer_solve(s, R, cfg)
    assert not tm.T[0].any()
    d = Dipole((4.2, 3.9, 4.1), (0.2, 1.0, 0.0))
    rhs = rhs_projected(d, s, m)
    sol = solve_potential(s, rhs, cfg)
    direct = sol.potential[sensors] - sol.potential[sensors[0]]
    np.testing.assert_allclose(tm.potentials(rhs.payload), direct, atol=1e-8 * np.abs(direct).max())
    # shared reference: difference of rows is the sensor-difference system
    t12 = solve_schur(s, R[1] - R[2], cfg)[0]
    np.testing.assert_allclose(tm.T[1] - tm.T[2], t12, atol=1e-8 * np.abs(t12).max())
