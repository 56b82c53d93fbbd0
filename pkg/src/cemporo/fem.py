"""P1 assembly of the Biot forms and the backward-Euler fine-scale solver.

All coefficients are constant per triangle, so every element integral below is
exact for linear shape functions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgument, SolverFailure
from .medium import Medium
from .mesh import FineMesh, vector_dofs

log = logging.getLogger(__name__)

SOLVER_RTOL = 1e-10

_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def _select(mesh, tris):
    if tris is None:
        return mesh.triangles, mesh.areas, mesh.gradients
    return mesh.triangles[tris], mesh.areas[tris], mesh.gradients[tris]


def _per_tri(values, tris):
    values = np.asarray(values, dtype=float)
    return values if tris is None else values[tris]


def _scatter(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


def assemble_elasticity(mesh: FineMesh, lam, mu, tris=None) -> sp.csr_matrix:
    """Stiffness of a(u, v) = int sigma(u) : eps(v) on the interleaved vector space."""
    T, area, G = _select(mesh, tris)
    lam, mu = _per_tri(lam, tris), _per_tri(mu, tris)
    nt = len(T)
    # Voigt strain rows: eps11, eps22, 2*eps12
    Bm = np.zeros((nt, 3, 6))
    Bm[:, 0, 0::2] = G[:, :, 0]
    Bm[:, 1, 1::2] = G[:, :, 1]
    Bm[:, 2, 0::2] = G[:, :, 1]
    Bm[:, 2, 1::2] = G[:, :, 0]
    Dm = np.zeros((nt, 3, 3))
    Dm[:, 0, 0] = Dm[:, 1, 1] = lam + 2 * mu
    Dm[:, 0, 1] = Dm[:, 1, 0] = lam
    Dm[:, 2, 2] = mu
    Ke = area[:, None, None] * np.einsum("tki,tkl,tlj->tij", Bm, Dm, Bm)
    dofs = np.stack([2 * T, 2 * T + 1], axis=2).reshape(nt, 6)
    rows = np.broadcast_to(dofs[:, :, None], Ke.shape)
    cols = np.broadcast_to(dofs[:, None, :], Ke.shape)
    nd = 2 * mesh.n_vertices
    return _scatter(rows, cols, Ke, (nd, nd))


def assemble_diffusion(mesh: FineMesh, coef, tris=None) -> sp.csr_matrix:
    T, area, G = _select(mesh, tris)
    coef = _per_tri(coef, tris)
    Ke = (coef * area)[:, None, None] * np.einsum("tik,tjk->tij", G, G)
    rows = np.broadcast_to(T[:, :, None], Ke.shape)
    cols = np.broadcast_to(T[:, None, :], Ke.shape)
    nv = mesh.n_vertices
    return _scatter(rows, cols, Ke, (nv, nv))


def assemble_mass(mesh: FineMesh, weight=None, tris=None) -> sp.csr_matrix:
    """Scalar P1 mass matrix of int w p q, w constant per triangle."""
    T, area, _ = _select(mesh, tris)
    w = area if weight is None else area * _per_tri(weight, tris)
    Ke = w[:, None, None] * _MASS_REF
    rows = np.broadcast_to(T[:, :, None], Ke.shape)
    cols = np.broadcast_to(T[:, None, :], Ke.shape)
    nv = mesh.n_vertices
    return _scatter(rows, cols, Ke, (nv, nv))


def assemble_vector_mass(mesh: FineMesh, weight=None, tris=None) -> sp.csr_matrix:
    return sp.kron(assemble_mass(mesh, weight, tris), sp.identity(2), format="csr")


def assemble_coupling(mesh: FineMesh, alpha, tris=None) -> sp.csr_matrix:
    """Rows: pressure test functions; columns: displacement DOFs of int alpha div(u) q."""
    T, area, G = _select(mesh, tris)
    alpha = _per_tri(alpha, tris)
    nt = len(T)
    div = G.reshape(nt, 6)  # d/du_{a,c} div u = dphi_a/dx_c, interleaved
    Ke = (alpha * area / 3.0)[:, None, None] * np.broadcast_to(div[:, None, :], (nt, 3, 6))
    dofs = np.stack([2 * T, 2 * T + 1], axis=2).reshape(nt, 6)
    rows = np.broadcast_to(T[:, :, None], Ke.shape)
    cols = np.broadcast_to(dofs[:, None, :], Ke.shape)
    return _scatter(rows, cols, Ke, (mesh.n_vertices, 2 * mesh.n_vertices))


def _evaluate(fun, x, y, *args):
    if fun is None:
        return np.zeros_like(x)
    if callable(fun):
        return np.broadcast_to(np.asarray(fun(x, y, *args), dtype=float), x.shape)
    return np.full_like(x, float(fun))


def load_vector(mesh: FineMesh, fun, *args) -> np.ndarray:
    """int fun * phi_a by edge-midpoint quadrature (exact for quadratics)."""
    T, area = mesh.triangles, mesh.areas
    P = mesh.vertices[T]
    mids = 0.5 * (P[:, [0, 1, 2]] + P[:, [1, 2, 0]])  # midpoints of edges 01, 12, 20
    fm = _evaluate(fun, mids[..., 0], mids[..., 1], *args)
    # phi_a is 1/2 on the two edges touching vertex a
    loc = np.column_stack([fm[:, 2] + fm[:, 0], fm[:, 0] + fm[:, 1], fm[:, 1] + fm[:, 2]])
    loc *= (area / 6.0)[:, None]
    return np.bincount(T.ravel(), weights=loc.ravel(), minlength=mesh.n_vertices)


@dataclass(frozen=True, eq=False)
class OperatorSet:
    mesh: FineMesh
    medium: Medium
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    D: sp.csr_matrix
    mass: sp.csr_matrix
    free_u: np.ndarray
    free_p: np.ndarray

    @cached_property
    def A_free(self):
        return self.A[self.free_u][:, self.free_u].tocsc()

    @cached_property
    def B_free(self):
        return self.B[self.free_p][:, self.free_p].tocsc()

    @cached_property
    def C_free(self):
        return self.C[self.free_p][:, self.free_p].tocsc()

    @cached_property
    def D_free(self):
        return self.D[self.free_p][:, self.free_u].tocsc()

    @cached_property
    def mass_free(self):
        return self.mass[self.free_p][:, self.free_p].tocsc()

    @property
    def n_u(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.B.shape[0]

    def expand_u(self, u_free):
        u = np.zeros(self.n_u)
        u[self.free_u] = u_free
        return u

    def expand_p(self, p_free):
        p = np.zeros(self.n_p)
        p[self.free_p] = p_free
        return p


def assemble_operators(mesh: FineMesh, medium: Medium) -> OperatorSet:
    medium.check_mesh(mesh)
    A = assemble_elasticity(mesh, medium.lam, medium.mu)
    B = assemble_diffusion(mesh, medium.mobility)
    C = assemble_mass(mesh, np.full(mesh.n_triangles, 1.0 / medium.M))
    D = assemble_coupling(mesh, medium.alpha)
    mass = assemble_mass(mesh)
    free_p = mesh.interior_vertices
    return OperatorSet(mesh, medium, A, B, C, D, mass, vector_dofs(free_p), free_p)


@dataclass(frozen=True)
class PoroState:
    u: np.ndarray
    p: np.ndarray
    t: float


@dataclass(frozen=True)
class TimeGrid:
    tau: float
    n_steps: int

    @property
    def T(self) -> float:
        return self.n_steps * self.tau

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.n_steps + 1)

    @classmethod
    def from_T(cls, T, tau):
        if tau <= 0 or T <= 0:
            raise InvalidArgument(f"T and tau must be positive, got T={T}, tau={tau}")
        steps = round(T / tau)
        if steps < 1 or abs(steps * tau - T) > 1e-12 * max(1.0, abs(T)):
            raise InvalidArgument(f"tau={tau} does not divide T={T}")
        return cls(float(tau), int(steps))


class DirectSolver:
    """Sparse or dense LU of a symmetrically equilibrated matrix.

    The residual test is applied in the equilibrated system ``S K S``, with
    ``S = diag(|K_ii|)^(-1/2)``; plain ``|r|/|b|`` stalls near 1e-10 at 1e4 contrast.
    """

    def __init__(self, K, rtol=SOLVER_RTOL, what="linear system"):
        self.rtol, self.what = rtol, what
        d = np.abs(K.diagonal())
        self.s = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 1.0)
        if sp.issparse(K):
            S = sp.diags(self.s)
            self.K = (S @ K @ S).tocsc()
            self._solve = spla.splu(self.K).solve
        else:
            self.K = self.s[:, None] * np.asarray(K) * self.s[None, :]
            lu = la.lu_factor(self.K)
            self._solve = lambda b: la.lu_solve(lu, b)

    def __call__(self, b):
        bs = self.s * np.asarray(b, dtype=float)
        bnorm = np.linalg.norm(bs)
        if bnorm == 0.0:
            return np.zeros_like(bs)
        y = self._solve(bs)
        for _ in range(3):
            r = bs - self.K @ y
            res = np.linalg.norm(r) / bnorm
            if res <= self.rtol:
                return self.s * y
            y = y + self._solve(r)
        res = np.linalg.norm(bs - self.K @ y) / bnorm
        if res > self.rtol:
            raise SolverFailure(f"{self.what} did not reach tolerance {self.rtol:g}", res)
        return self.s * y


def solve_checked(K, b, rtol=SOLVER_RTOL, what="linear system"):
    return DirectSolver(K, rtol, what)(b)


class SaddleStepper:
    """Backward-Euler step of the coupled system for given (free or reduced) matrices.

    Solves the symmetrized block system
    ``[[A, -D^T], [-D, -(C + tau B)]] [u; p] = [0; -(D u_prev + C p_prev + tau F)]``.
    """

    def __init__(self, A, D, C, B, tau):
        self.A, self.D, self.C, self.B, self.tau = A, D, C, B, tau
        self.nu = A.shape[0]
        if sp.issparse(A):
            self.K = sp.bmat([[A, -D.T], [-D, -(C + tau * B)]], format="csc")
        else:
            self.K = np.block([[A, -D.T], [-D, -(C + tau * B)]])
        self._solve = DirectSolver(self.K, what="backward Euler step")

    def step(self, u_prev, p_prev, load):
        g = self.D @ u_prev + self.C @ p_prev + self.tau * load
        rhs = np.concatenate([np.zeros(self.nu), -g])
        x = self._solve(rhs)
        return x[:self.nu], x[self.nu:]

    def energy(self, u, p):
        return float(u @ (self.A @ u) + p @ (self.C @ p))


def solve_initial_displacement(ops: OperatorSet, p0_dofs) -> np.ndarray:
    """u0 with a(u0, v) = d(v, p0) for all v; p0 and the result are full-length vectors."""
    p0 = np.asarray(p0_dofs, dtype=float)
    rhs = ops.D_free.T @ p0[ops.free_p]
    return ops.expand_u(solve_checked(ops.A_free, rhs, what="initial displacement"))


def project_initial_pressure(ops: OperatorSet, p0_function) -> np.ndarray:
    """L2 projection of p0 onto the P1 space with zero boundary values."""
    b = load_vector(ops.mesh, p0_function)[ops.free_p]
    return ops.expand_p(solve_checked(ops.mass_free, b, what="L2 projection"))


def step_backward_euler(ops: OperatorSet, state: PoroState, tau, f_n, stepper=None) -> PoroState:
    """One step; ``f_n`` is the full-length load vector of f(t_n)."""
    stepper = stepper or SaddleStepper(ops.A_free, ops.D_free, ops.C_free, ops.B_free, tau)
    u, p = stepper.step(state.u[ops.free_u], state.p[ops.free_p], np.asarray(f_n)[ops.free_p])
    return PoroState(ops.expand_u(u), ops.expand_p(p), state.t + tau)


def source_loads(mesh, timegrid: TimeGrid, f):
    """Load vectors of f(t_n) for n = 1..N; f is None, a constant or f(x, y, t)."""
    if f is None or not callable(f):
        F = load_vector(mesh, 0.0 if f is None else f)
        return [F] * timegrid.n_steps
    return [load_vector(mesh, f, t) for t in timegrid.times[1:]]


def run_fine_solver(mesh, medium, timegrid: TimeGrid, f, p0_function, ops=None) -> list[PoroState]:
    ops = ops or assemble_operators(mesh, medium)
    p0 = project_initial_pressure(ops, p0_function)
    u0 = solve_initial_displacement(ops, p0)
    states = [PoroState(u0, p0, 0.0)]
    stepper = SaddleStepper(ops.A_free, ops.D_free, ops.C_free, ops.B_free, timegrid.tau)
    for n, F in enumerate(source_loads(mesh, timegrid, f), start=1):
        prev = states[-1]
        u, p = stepper.step(prev.u[ops.free_u], prev.p[ops.free_p], F[ops.free_p])
        states.append(PoroState(ops.expand_u(u), ops.expand_p(p), n * timegrid.tau))
        log.debug("fine step %d/%d", n, timegrid.n_steps)
    return states


def energy(ops: OperatorSet, state: PoroState) -> float:
    return float(state.u @ (ops.A @ state.u) + state.p @ (ops.C @ state.p))


def export_fields(path, mesh: FineMesh, **point_data):
    """Legacy ASCII VTK unstructured grid with scalar point arrays (e.g. u1, u2, p)."""
    nv, nt = mesh.n_vertices, mesh.n_triangles
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\ncemporo fields\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        np.savetxt(fh, np.column_stack([mesh.vertices, np.zeros(nv)]), fmt="%.17g")
        fh.write(f"CELLS {nt} {4 * nt}\n")
        np.savetxt(fh, np.column_stack([np.full(nt, 3), mesh.triangles]), fmt="%d")
        fh.write(f"CELL_TYPES {nt}\n")
        np.savetxt(fh, np.full(nt, 5), fmt="%d")
        fh.write(f"POINT_DATA {nv}\n")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (nv,):
                raise InvalidArgument(f"array {name} has shape {values.shape}, expected ({nv},)")
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, values, fmt="%.17g")


def state_fields(state: PoroState) -> dict:
    return {"u1": state.u[0::2], "u2": state.u[1::2], "p": state.p}
