import numpy as np
import pytest
import scipy.sparse as sp

from cemporo.cem import build_multiscale_space, identity_space
from cemporo.errors import InvalidArgument
from cemporo.fem import TimeGrid, assemble_operators, project_initial_pressure, run_fine_solver
from cemporo.medium import generate_channel_medium
from cemporo.mesh import build_coarse_partition, build_fine_mesh
from cemporo.ms_solver import (galerkin, init_ms_pressure, reduce_operators, reduced_energy, run_ms_solver)
from cemporo.spectral import build_auxiliary_spaces


def p0(x, y):
    return x * (1 - x) * y * (1 - y)


@pytest.fixture(scope="module")
def setup():
    mesh = build_fine_mesh(12)
    part = build_coarse_partition(mesh, 3)
    med, _ = generate_channel_medium(mesh, part, 1e3, seed=5, n_long=1, n_short=2)
    ops = assemble_operators(mesh, med)
    aux = build_auxiliary_spaces(ops, part, 3)
    space = build_multiscale_space(ops, aux, part, 1)
    return mesh, med, ops, space


def test_identity_space_reproduces_fine_solver(setup):
    mesh, med, ops, _ = setup
    grid = TimeGrid.from_T(10, 2)
    fine = run_fine_solver(mesh, med, grid, 1.0, p0, ops)
    red = reduce_operators(ops, identity_space(ops))
    ms = run_ms_solver(red, grid, 1.0, fine[0].p)
    for k, ref in enumerate(fine):
        got = ms.fine(k)
        assert got.t == ref.t
        assert np.linalg.norm(got.u - ref.u) <= 1e-8 * np.linalg.norm(ref.u)
        assert np.linalg.norm(got.p - ref.p) <= 1e-8 * np.linalg.norm(ref.p)


def test_reduced_energy_nonincreasing(setup):
    mesh, _, ops, space = setup
    red = reduce_operators(ops, space)
    ms = run_ms_solver(red, TimeGrid.from_T(20, 1), None, project_initial_pressure(ops, p0))
    E = [reduced_energy(red, s) for s in ms.states]
    assert E[0] > 0
    assert all(b <= a + 1e-12 * E[0] for a, b in zip(E, E[1:]))


def test_reduced_matrices_symmetric_and_consistent(setup):
    _, _, ops, space = setup
    red = reduce_operators(ops, space)
    assert red.dense
    for X in (red.A_ms, red.B_ms, red.C_ms):
        assert np.array_equal(X, X.T)
    np.testing.assert_allclose(red.D_ms, (space.R_p.T @ ops.D @ space.R_u).toarray(), rtol=1e-14, atol=1e-14)
    assert red.A_ms.shape == (space.dim_u, space.dim_u)
    assert np.linalg.eigvalsh(red.A_ms).min() > 0


def test_initial_pressure_is_energy_projection(setup):
    _, _, ops, space = setup
    ph0 = project_initial_pressure(ops, p0)
    c = init_ms_pressure(ops, space, ph0)
    r = space.R_p.T @ (ops.B @ (ph0 - space.R_p @ c))
    assert np.abs(r).max() < 1e-10 * np.abs(space.R_p.T @ (ops.B @ ph0)).max()
    # a function already in the space is recovered exactly
    target = np.arange(space.dim_p, dtype=float)
    np.testing.assert_allclose(init_ms_pressure(ops, space, space.R_p @ target), target, rtol=1e-8, atol=1e-8)


def test_galerkin_rejects_asymmetric_operator():
    K = sp.csr_matrix(np.array([[2.0, 1.0], [0.0, 2.0]]))
    R = sp.csr_matrix(np.eye(2))
    with pytest.raises(InvalidArgument):
        galerkin(R, K, "K")
    np.testing.assert_array_equal(galerkin(R, K + K.T, "K"), (K + K.T).toarray())


def test_shape_mismatch(setup):
    _, _, ops, space = setup
    mesh = build_fine_mesh(6)
    other = assemble_operators(mesh, generate_channel_medium(mesh, build_coarse_partition(mesh, 3), 10, 0,
                                                             n_long=1, n_short=0)[0])
    with pytest.raises(InvalidArgument):
        reduce_operators(other, space)
