import numpy as np
import pytest

from cemporo.cem import (PatchProblem, _check_gram, build_multiscale_space, cem_objective, identity_space,
                         solve_cem_basis, solve_global_basis)
from cemporo.errors import InvalidArgument, RankDeficiencyError
from cemporo.fem import assemble_operators
from cemporo.medium import generate_channel_medium, homogeneous_medium
from cemporo.mesh import build_coarse_partition, build_fine_mesh, oversample
from cemporo.spectral import build_auxiliary_spaces


@pytest.fixture(scope="module")
def channel():
    mesh = build_fine_mesh(16)
    part = build_coarse_partition(mesh, 4)
    med, _ = generate_channel_medium(mesh, part, 1e3, seed=1)
    ops = assemble_operators(mesh, med)
    return mesh, part, ops, build_auxiliary_spaces(ops, part, 3)


@pytest.fixture(scope="module")
def homog():
    mesh = build_fine_mesh(24)
    part = build_coarse_partition(mesh, 6)
    ops = assemble_operators(mesh, homogeneous_medium(mesh))
    return mesh, part, ops, build_auxiliary_spaces(ops, part, 2)


def _dense_global_oracle(ops, aux, i, j, family):
    """Whole-domain constrained minimizer assembled densely from the block eigenpairs."""
    K = (ops.A if family == "u" else ops.B).toarray()
    free = ops.free_u if family == "u" else ops.free_p
    n = K.shape[0]
    P = np.zeros((n, n))
    for blk in aux.family(family).blocks:
        W = np.zeros((n, blk.J))
        W[blk.dofs] = blk.s_matrix @ blk.eigvecs
        P += W @ W.T
        if blk.block == i:
            rhs = W[:, j]
    x = np.zeros(n)
    x[free] = np.linalg.solve((K + P)[np.ix_(free, free)], rhs[free])
    return x


@pytest.mark.parametrize("family", ["u", "p"])
def test_global_basis_matches_dense_oracle(channel, family):
    _, part, ops, aux = channel
    psi = solve_global_basis(ops, aux, part, 5, 1, family)
    ref = _dense_global_oracle(ops, aux, 5, 1, family)
    np.testing.assert_allclose(psi, ref, rtol=1e-8, atol=1e-10 * np.abs(ref).max())


def test_saturated_patch_equals_global(channel):
    _, part, ops, aux = channel
    glob = solve_global_basis(ops, aux, part, 6, 2, "p")
    sat = solve_cem_basis(ops, aux, oversample(part, 6, part.N), 6, 2, "p").dofs
    np.testing.assert_array_equal(glob, sat)


@pytest.mark.parametrize("family", ["u", "p"])
def test_basis_minimizes_objective(channel, family):
    mesh, part, ops, aux = channel
    patch = oversample(part, 9, 1)
    psi = solve_cem_basis(ops, aux, patch, 9, 0, family).dofs
    space = aux.family(family)
    J0 = cem_objective(ops, space, 9, 0, psi)
    dofs = PatchProblem(ops, space, patch).dofs
    rng = np.random.default_rng(3)
    for _ in range(5):
        v = np.zeros_like(psi)
        v[dofs] = rng.standard_normal(len(dofs))
        v *= 1e-3 * np.linalg.norm(psi) / np.linalg.norm(v)
        plus, minus = cem_objective(ops, space, 9, 0, psi + v), cem_objective(ops, space, 9, 0, psi - v)
        assert plus > J0 and minus > J0
        # stationarity: the first variation cancels
        assert abs(plus - minus) < 1e-6 * (plus + minus - 2 * J0)


def test_basis_supported_in_patch(channel):
    mesh, part, ops, aux = channel
    patch = oversample(part, 0, 1)
    psi = solve_cem_basis(ops, aux, patch, 0, 1, "u").dofs
    nz = np.unique(np.flatnonzero(psi) // 2)
    assert np.isin(nz, patch.interior_vertices).all()
    assert psi[0::2][mesh.boundary_vertex_flags].max(initial=0) == 0


def test_wrong_centre_rejected(channel):
    _, part, ops, aux = channel
    with pytest.raises(InvalidArgument):
        solve_cem_basis(ops, aux, oversample(part, 2, 1), 3, 0, "p")


def test_translation_symmetry_homogeneous(homog):
    mesh, part, ops, aux = homog
    # blocks (2,2) and (3,2): their one-layer patches stay clear of the boundary
    a, b = 2 * 6 + 2, 2 * 6 + 3
    pa = solve_cem_basis(ops, aux, oversample(part, a, 1), a, 0, "p").dofs.reshape(25, 25)
    pb = solve_cem_basis(ops, aux, oversample(part, b, 1), b, 0, "p").dofs.reshape(25, 25)
    np.testing.assert_allclose(pb[:, 4:], pa[:, :-4], atol=1e-12 * np.abs(pa).max())


def test_error_decays_with_layers(homog):
    mesh, part, ops, aux = homog
    i = 2 * 6 + 2
    glob = solve_global_basis(ops, aux, part, i, 0, "p")
    err = []
    for m in (1, 2, 3):
        d = solve_cem_basis(ops, aux, oversample(part, i, m), i, 0, "p").dofs - glob
        err.append(np.sqrt(d @ (ops.B @ d)))
    assert err[0] > err[1] > err[2]


def test_multiscale_space_shape(channel):
    mesh, part, ops, aux = channel
    space = build_multiscale_space(ops, aux, part, 1)
    assert space.R_u.shape == (ops.n_u, part.n_blocks * 3)
    assert space.R_p.shape == (ops.n_p, part.n_blocks * 3)
    assert np.array_equal(space.column_block_p, np.repeat(np.arange(part.n_blocks), 3))
    col = space.R_p[:, 3 * 5 + 1].toarray().ravel()
    np.testing.assert_array_equal(col, solve_cem_basis(ops, aux, oversample(part, 5, 1), 5, 1, "p").dofs)
    threaded = build_multiscale_space(ops, aux, part, 1, threads=3)
    assert (threaded.R_u != space.R_u).nnz == 0


def test_rank_check_reports_blocks():
    G = np.eye(4)
    G[2, 3] = G[3, 2] = 1.0
    G[3, 3] = 1.0
    with pytest.raises(RankDeficiencyError) as info:
        _check_gram(G, np.array([0, 0, 1, 2]), "p")
    assert set(info.value.blocks) == {1, 2}
    _check_gram(np.eye(3), np.arange(3), "u")


def test_identity_space(channel):
    _, _, ops, _ = channel
    space = identity_space(ops)
    assert space.dim_u == len(ops.free_u) and space.dim_p == len(ops.free_p)
    np.testing.assert_array_equal((space.R_p.T @ space.R_p).toarray(), np.eye(space.dim_p))
