"""Constraint energy minimizing basis functions on oversampled patches.

For a patch ``K_{i,m}`` the basis ``psi`` targeting auxiliary function ``v_j^i`` solves

    a(psi, v) + s(pi psi, pi v) = s(v_j^i, pi v)   for all v in V_0(K_{i,m}).

With s-orthonormal auxiliary bases, ``s(pi psi, pi v) = sum_k (W_k^T psi) . (W_k^T v)``
where ``W_k = S_k V_k`` is a block's weighted-mass times eigenvector matrix.  Only
blocks inside the patch contribute, and the right-hand side is ``W_i[:, j]``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument, RankDeficiencyError
from .fem import DirectSolver, OperatorSet
from .mesh import CoarsePartition, OversampledPatch, oversample, vector_dofs
from .spectral import AuxiliarySpace, AuxiliarySpaces

log = logging.getLogger(__name__)

DENSE_LIMIT = 4000


@dataclass(frozen=True, eq=False)
class CemBasisFunction:
    block: int
    j: int
    layers: int
    family: str
    dofs: np.ndarray   # full-length fine DOF vector


def _stiffness(ops: OperatorSet, family: str):
    return ops.A if family == "u" else ops.B


class PatchProblem:
    """Factorized patch system shared by every j of one (patch, family)."""

    def __init__(self, ops: OperatorSet, aux: AuxiliarySpace, patch: OversampledPatch):
        self.family = aux.family
        self.patch = patch
        self.n_dofs = aux.n_dofs
        self.aux = aux
        self.dofs = vector_dofs(patch.interior_vertices) if self.family == "u" else patch.interior_vertices
        pos = np.full(self.n_dofs, -1)
        pos[self.dofs] = np.arange(len(self.dofs))
        self.pos = pos
        K = _stiffness(ops, self.family)[self.dofs][:, self.dofs]
        rows, cols, vals = [], [], []
        self._w = {}
        for k in patch.block_set:
            blk = aux.blocks[k]
            p = pos[blk.dofs]
            keep = p >= 0
            W = blk.s_basis[keep]
            self._w[int(k)] = (p[keep], W)
            G = W @ W.T
            pk = p[keep]
            rows.append(np.repeat(pk, len(pk)))
            cols.append(np.tile(pk, len(pk)))
            vals.append(G.ravel())
        n = len(self.dofs)
        P = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        self.matrix = (K + P).tocsc()
        self._solve = DirectSolver(self.matrix, what=f"CEM patch problem (block {patch.center_block}, "
                                                      f"m={patch.layers}, {self.family})")

    def rhs(self, j: int) -> np.ndarray:
        p, W = self._w[int(self.patch.center_block)]
        b = np.zeros(len(self.dofs))
        b[p] = W[:, j]
        return b

    def solve(self, j: int) -> np.ndarray:
        x = self._solve(self.rhs(j))
        out = np.zeros(self.n_dofs)
        out[self.dofs] = x
        return out


def cem_objective(ops: OperatorSet, aux: AuxiliarySpace, i: int, j: int, psi) -> float:
    """Energy minimized by the CEM basis: a(psi, psi) + s(pi psi - v_j^i, pi psi - v_j^i)."""
    K = _stiffness(ops, aux.family)
    coeffs = aux.coefficients(psi)
    coeffs[i] = coeffs[i].copy()
    coeffs[i][j] -= 1.0
    return float(psi @ (K @ psi) + sum(c @ c for c in coeffs))


def solve_cem_basis(ops, aux: AuxiliarySpaces, patch: OversampledPatch, i, j, family) -> CemBasisFunction:
    if patch.center_block != i:
        raise InvalidArgument(f"patch is centred at block {patch.center_block}, not {i}")
    problem = PatchProblem(ops, aux.family(family), patch)
    return CemBasisFunction(i, j, patch.layers, family, problem.solve(j))


def solve_global_basis(ops, aux: AuxiliarySpaces, part: CoarsePartition, i, j, family) -> np.ndarray:
    whole = oversample(part, i, 2 * part.N)
    return PatchProblem(ops, aux.family(family), whole).solve(j)


@dataclass(frozen=True, eq=False)
class MultiscaleSpace:
    R_u: sp.csc_matrix
    R_p: sp.csc_matrix
    m: int
    J1: int
    J2: int
    column_block_u: np.ndarray
    column_block_p: np.ndarray

    @property
    def dim_u(self) -> int:
        return self.R_u.shape[1]

    @property
    def dim_p(self) -> int:
        return self.R_p.shape[1]


def _family_columns(ops, aux: AuxiliarySpace, part, m, threads):
    def run(i):
        problem = PatchProblem(ops, aux, oversample(part, i, m))
        return [problem.solve(j) for j in range(aux.blocks[i].J)]

    blocks = range(part.n_blocks)
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_block = list(pool.map(run, blocks))
    else:
        per_block = [run(i) for i in blocks]
    rows, cols, vals, owner = [], [], [], []
    for i, vecs in enumerate(per_block):
        for v in vecs:
            nz = np.flatnonzero(v)
            rows.append(nz)
            cols.append(np.full(len(nz), len(owner)))
            vals.append(v[nz])
            owner.append(i)
    R = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(aux.n_dofs, len(owner)))
    return R, np.array(owner)


def _check_gram(G, owner, family):
    G = G.toarray() if sp.issparse(G) else G
    try:
        np.linalg.cholesky(G)
        return
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(G)
    bad = vecs[:, vals <= 1e-12 * max(vals.max(), 1e-300)]
    if bad.size == 0:
        bad = vecs[:, :1]
    culprits = owner[(np.abs(bad) > 0.1 * np.abs(bad).max()).any(axis=1)]
    raise RankDeficiencyError(family, culprits)


def build_multiscale_space(ops, aux: AuxiliarySpaces, part: CoarsePartition, m: int,
                           threads=None, check=True) -> MultiscaleSpace:
    if m < 0:
        raise InvalidArgument(f"layers must be >= 0, got {m}")
    R_u, own_u = _family_columns(ops, aux.u, part, m, threads)
    R_p, own_p = _family_columns(ops, aux.p, part, m, threads)
    if check:
        for R, K, own, fam in ((R_u, ops.A, own_u, "u"), (R_p, ops.B, own_p, "p")):
            if R.shape[1] <= DENSE_LIMIT:
                _check_gram((R.T @ K @ R).toarray(), own, fam)
    log.info("multiscale space m=%d: dim_u=%d dim_p=%d", m, R_u.shape[1], R_p.shape[1])
    return MultiscaleSpace(R_u, R_p, m, aux.u.J, aux.p.J, own_u, own_p)


def identity_space(ops: OperatorSet) -> MultiscaleSpace:
    """The full fine space written as a 'multiscale' space (R = identity on free DOFs)."""
    def eye(n, free):
        return sp.csc_matrix((np.ones(len(free)), (free, np.arange(len(free)))), shape=(n, len(free)))
    return MultiscaleSpace(eye(ops.n_u, ops.free_u), eye(ops.n_p, ops.free_p), -1, 0, 0,
                           np.full(len(ops.free_u), -1), np.full(len(ops.free_p), -1))


def basis_fields(psi_u, phi_p) -> dict:
    return {"psi_u1": psi_u[0::2], "psi_u2": psi_u[1::2], "phi_p": phi_p}
