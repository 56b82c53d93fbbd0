"""Coarse partition of unity, spectral weights and the per-block auxiliary spaces."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import DegenerateBlockError, InvalidArgument
from .fem import OperatorSet, assemble_diffusion, assemble_elasticity, assemble_mass, assemble_vector_mass
from .mesh import CoarsePartition, FineMesh, vector_dofs

FAMILIES = ("u", "p")


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """Bilinear coarse hats interpolated onto the fine P1 space.

    ``chi`` is a sparse (coarse nodes x fine vertices) matrix; coarse node
    ``J*(N+1) + I`` sits at ``(I/N, J/N)``.  Each fine triangle lies in one
    coarse block and sees exactly its four corner hats: ``tri_nodes`` lists
    them and ``grad_chi`` holds their (constant) gradients, shape (ntri, 4, 2).
    """
    chi: sp.csr_matrix
    tri_nodes: np.ndarray
    grad_chi: np.ndarray

    @cached_property
    def grad_sq_sum(self) -> np.ndarray:
        return (self.grad_chi ** 2).sum(axis=(1, 2))


def build_partition_of_unity(mesh: FineMesh, part: CoarsePartition) -> PartitionOfUnity:
    N, r, n = part.N, part.ratio, mesh.n
    i, j = np.arange(mesh.n_vertices) % (n + 1), np.arange(mesh.n_vertices) // (n + 1)
    rows, cols, vals = [], [], []
    for dI in (0, 1):
        for dJ in (0, 1):
            # lower-left coarse node of the cell containing the vertex (clipped at the top/right edge)
            I = np.minimum(i // r, N - 1) + dI
            J = np.minimum(j // r, N - 1) + dJ
            w = (1.0 - np.abs(i / r - I)) * (1.0 - np.abs(j / r - J))
            keep = w > 0
            rows.append((J * (N + 1) + I)[keep])
            cols.append(np.flatnonzero(keep))
            vals.append(w[keep])
    chi = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=((N + 1) ** 2, mesh.n_vertices)).tocsr()
    bx, by = part.block_of_triangle % N, part.block_of_triangle // N
    tri_nodes = np.column_stack([by * (N + 1) + bx, by * (N + 1) + bx + 1,
                                 (by + 1) * (N + 1) + bx, (by + 1) * (N + 1) + bx + 1])
    # values of each corner hat at the triangle's three vertices
    node_I, node_J = tri_nodes % (N + 1), tri_nodes // (N + 1)
    vi, vj = i[mesh.triangles], j[mesh.triangles]
    vals_at = (np.maximum(0.0, 1.0 - np.abs(vi[:, None, :] / r - node_I[:, :, None]))
               * np.maximum(0.0, 1.0 - np.abs(vj[:, None, :] / r - node_J[:, :, None])))
    grad_chi = np.einsum("tka,tad->tkd", vals_at, mesh.gradients)
    return PartitionOfUnity(chi, tri_nodes, grad_chi)


@dataclass(frozen=True, eq=False)
class WeightFields:
    sigma_tilde: np.ndarray
    kappa_tilde: np.ndarray


def build_weight_fields(pou: PartitionOfUnity, medium) -> WeightFields:
    g = pou.grad_sq_sum
    return WeightFields(medium.elastic_weight * g, medium.mobility * g)


def _sign_fix(V):
    for k in range(V.shape[1]):
        col = V[:, k]
        big = np.flatnonzero(np.abs(col) > 1e-8 * np.abs(col).max())
        if big.size and col[big[0]] < 0:
            V[:, k] = -col
    return V


@dataclass(frozen=True, eq=False)
class AuxiliaryBlockSpace:
    block: int
    family: str
    dofs: np.ndarray          # global fine DOF ids of the block (boundary of Omega removed)
    eigvals: np.ndarray       # full local spectrum, ascending
    eigvecs: np.ndarray       # first J s-orthonormal eigenvectors, local DOF order
    s_matrix: np.ndarray
    stiffness: np.ndarray

    @property
    def J(self) -> int:
        return self.eigvecs.shape[1]

    @cached_property
    def s_basis(self) -> np.ndarray:
        """S_i V_i: coefficients of pi are ``s_basis.T @ w[dofs]``."""
        return self.s_matrix @ self.eigvecs

    def truncated(self, J: int) -> "AuxiliaryBlockSpace":
        if J > self.J:
            raise InvalidArgument(f"block {self.block} holds {self.J} eigenpairs, {J} requested")
        return AuxiliaryBlockSpace(self.block, self.family, self.dofs, self.eigvals,
                                   self.eigvecs[:, :J], self.s_matrix, self.stiffness)

    def to_global(self, n_dofs: int) -> np.ndarray:
        """Zero-extended eigenvectors as columns of an (n_dofs, J) array."""
        out = np.zeros((n_dofs, self.J))
        out[self.dofs] = self.eigvecs
        return out


def block_dofs(mesh: FineMesh, part: CoarsePartition, b: int, family: str) -> np.ndarray:
    verts = part.block_vertices(b)
    verts = verts[~mesh.boundary_vertex_flags[verts]]
    return vector_dofs(verts) if family == "u" else verts


def local_matrices(ops: OperatorSet, part: CoarsePartition, b: int, family: str, weights: WeightFields):
    mesh, med = ops.mesh, ops.medium
    tris = part.blocks[b]
    dofs = block_dofs(mesh, part, b, family)
    if family == "u":
        K = assemble_elasticity(mesh, med.lam, med.mu, tris)
        S = assemble_vector_mass(mesh, weights.sigma_tilde, tris)
    elif family == "p":
        K = assemble_diffusion(mesh, med.mobility, tris)
        # weight kappa-tilde (not its square), mirroring the displacement family
        S = assemble_mass(mesh, weights.kappa_tilde, tris)
    else:
        raise InvalidArgument(f"unknown family {family!r}")
    K = K[dofs][:, dofs].toarray()
    S = S[dofs][:, dofs].toarray()
    return dofs, 0.5 * (K + K.T), 0.5 * (S + S.T)


def solve_block_eigen(ops, part, i, J, family, weights) -> AuxiliaryBlockSpace:
    """First J eigenpairs of ``K v = lambda S v`` on block i, ascending and S-normalized."""
    dofs, K, S = local_matrices(ops, part, i, family, weights)
    if not 1 <= J <= len(dofs):
        raise InvalidArgument(f"J={J} outside [1, {len(dofs)}] on block {i}")
    try:
        vals, vecs = la.eigh(K, S)
    except la.LinAlgError:
        raise DegenerateBlockError(i, family) from None
    vecs = _sign_fix(vecs[:, :J].copy())
    return AuxiliaryBlockSpace(i, family, dofs, vals, vecs, S, K)


@dataclass(frozen=True, eq=False)
class AuxiliarySpace:
    family: str
    n_dofs: int
    blocks: list

    @property
    def J(self) -> int:
        return max(b.J for b in self.blocks)

    @property
    def dim(self) -> int:
        return sum(b.J for b in self.blocks)

    def truncated(self, J: int) -> "AuxiliarySpace":
        return AuxiliarySpace(self.family, self.n_dofs, [b.truncated(J) for b in self.blocks])

    def coefficients(self, w) -> list[np.ndarray]:
        """s_i(w, basis_j^i) for every block; ``w`` is global or broken (one array per block)."""
        if isinstance(w, (list, tuple)):
            return [blk.s_basis.T @ wi for blk, wi in zip(self.blocks, w)]
        w = np.asarray(w)
        return [blk.s_basis.T @ w[blk.dofs] for blk in self.blocks]

    def project(self, w) -> list[np.ndarray]:
        """pi(w) in broken form: one local DOF vector per block.

        Auxiliary functions of neighbouring blocks are discontinuous across block
        edges, so the projection is kept block-wise rather than summed on shared
        vertices.
        """
        return [blk.eigvecs @ c for blk, c in zip(self.blocks, self.coefficients(w))]

    def s_inner(self, w1, w2) -> float:
        """s(w1, w2) summed over blocks for broken or global arguments."""
        def local(w, blk, k):
            return w[k] if isinstance(w, (list, tuple)) else np.asarray(w)[blk.dofs]
        return float(sum(local(w1, b, k) @ b.s_matrix @ local(w2, b, k) for k, b in enumerate(self.blocks)))


@dataclass(frozen=True, eq=False)
class AuxiliarySpaces:
    u: AuxiliarySpace
    p: AuxiliarySpace
    weights: WeightFields

    def family(self, kind: str) -> AuxiliarySpace:
        return {"u": self.u, "p": self.p}[kind]

    def truncated(self, J1, J2=None) -> "AuxiliarySpaces":
        return AuxiliarySpaces(self.u.truncated(J1), self.p.truncated(J1 if J2 is None else J2), self.weights)


def build_auxiliary_spaces(ops, part, J1, J2=None, weights=None, threads=None) -> AuxiliarySpaces:
    J2 = J1 if J2 is None else J2
    if weights is None:
        weights = build_weight_fields(build_partition_of_unity(ops.mesh, part), ops.medium)
    tasks = [(fam, b, J) for fam, J in (("u", J1), ("p", J2)) for b in range(part.n_blocks)]

    def run(task):
        fam, b, J = task
        return solve_block_eigen(ops, part, b, J, fam, weights)

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    nb = part.n_blocks
    return AuxiliarySpaces(AuxiliarySpace("u", ops.n_u, results[:nb]),
                           AuxiliarySpace("p", ops.n_p, results[nb:]), weights)


def project_pi(aux: AuxiliarySpaces, field_kind: str, w) -> list[np.ndarray]:
    return aux.family(field_kind).project(w)


def write_eigenvalues_csv(path, aux: AuxiliarySpaces, count=None):
    """CSV dump: block_index, family, j (1-based), eigenvalue."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["block_index", "family", "j", "eigenvalue"])
        for space in (aux.u, aux.p):
            for blk in space.blocks:
                k = blk.J if count is None else min(count, len(blk.eigvals))
                for j in range(k):
                    out.writerow([blk.block, space.family, j + 1, repr(float(blk.eigvals[j]))])
