"""Galerkin-reduced coupled system on the multiscale spaces."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cem import DENSE_LIMIT, MultiscaleSpace
from .errors import InvalidArgument
from .fem import DirectSolver, OperatorSet, PoroState, SaddleStepper, TimeGrid, source_loads

log = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-13


def _sym(X, bound, name):
    """Symmetrize a Galerkin product after checking its asymmetry is round-off.

    ``bound`` is the entrywise product |R|^T |K| |R|, the natural scale of the
    summation error; high-contrast K makes the plain max entry far too small.
    """
    dense = not sp.issparse(X)
    asym = abs(X - X.T).max()
    scale = abs(bound).max()
    if asym > SYMMETRY_TOL * max(scale, 1e-300):
        raise InvalidArgument(f"{name} asymmetry {asym:.2e} exceeds round-off (scale {scale:.2e})")
    Y = 0.5 * (X + X.T)
    return Y if dense else Y.tocsc()


def galerkin(R, K, name, dense=True):
    X = R.T @ (K @ R)
    bound = abs(R).T @ (abs(K) @ abs(R))
    if dense:
        X, bound = X.toarray(), bound.toarray()
    return _sym(X, bound, name)


@dataclass(frozen=True, eq=False)
class ReducedOperatorSet:
    ops: OperatorSet
    space: MultiscaleSpace
    A_ms: object
    B_ms: object
    C_ms: object
    D_ms: object

    @property
    def dense(self) -> bool:
        return not sp.issparse(self.A_ms)

    def reduce_load(self, F):
        return self.space.R_p.T @ F

    def prolongate(self, state: "ReducedState") -> PoroState:
        return PoroState(self.space.R_u @ state.u, self.space.R_p @ state.p, state.t)


@dataclass(frozen=True)
class ReducedState:
    u: np.ndarray
    p: np.ndarray
    t: float


def reduce_operators(ops: OperatorSet, space: MultiscaleSpace) -> ReducedOperatorSet:
    Ru, Rp = space.R_u, space.R_p
    if Ru.shape[0] != ops.n_u or Rp.shape[0] != ops.n_p:
        raise InvalidArgument(f"space rows ({Ru.shape[0]}, {Rp.shape[0]}) do not match "
                              f"operators ({ops.n_u}, {ops.n_p})")
    dense = Ru.shape[1] + Rp.shape[1] <= DENSE_LIMIT

    A = galerkin(Ru, ops.A, "A_ms", dense)
    B = galerkin(Rp, ops.B, "B_ms", dense)
    C = galerkin(Rp, ops.C, "C_ms", dense)
    D = Rp.T @ (ops.D @ Ru)
    D = D.toarray() if dense else D.tocsc()
    return ReducedOperatorSet(ops, space, A, B, C, D)


def init_ms_pressure(ops: OperatorSet, space: MultiscaleSpace, p_h0, reduced=None) -> np.ndarray:
    """Coefficients of the b-orthogonal projection of p_h0 onto Q_ms."""
    B_ms = reduced.B_ms if reduced is not None else galerkin(space.R_p, ops.B, "B_ms")
    rhs = space.R_p.T @ (ops.B @ np.asarray(p_h0, dtype=float))
    return DirectSolver(B_ms, what="multiscale initial pressure")(rhs)


def init_ms_displacement(reduced: ReducedOperatorSet, p_ms0) -> np.ndarray:
    """Multiscale analogue of the consistent initial displacement: A_ms u = D_ms^T p."""
    rhs = reduced.D_ms.T @ np.asarray(p_ms0, dtype=float)
    return DirectSolver(reduced.A_ms, what="multiscale initial displacement")(rhs)


@dataclass
class MsSolution:
    reduced: ReducedOperatorSet
    states: list

    def fine(self, n=-1) -> PoroState:
        return self.reduced.prolongate(self.states[n])

    @property
    def final(self) -> PoroState:
        return self.fine(-1)


def run_ms_solver(reduced: ReducedOperatorSet, timegrid: TimeGrid, f, p_h0) -> MsSolution:
    p0 = init_ms_pressure(reduced.ops, reduced.space, p_h0, reduced)
    u0 = init_ms_displacement(reduced, p0)
    states = [ReducedState(u0, p0, 0.0)]
    stepper = SaddleStepper(reduced.A_ms, reduced.D_ms, reduced.C_ms, reduced.B_ms, timegrid.tau)
    for n, F in enumerate(source_loads(reduced.ops.mesh, timegrid, f), start=1):
        prev = states[-1]
        u, p = stepper.step(prev.u, prev.p, reduced.reduce_load(F))
        states.append(ReducedState(u, p, n * timegrid.tau))
    log.debug("multiscale run: %d steps, dims (%d, %d)", timegrid.n_steps, len(u0), len(p0))
    return MsSolution(reduced, states)


def reduced_energy(reduced: ReducedOperatorSet, state: ReducedState) -> float:
    return float(state.u @ (reduced.A_ms @ state.u) + state.p @ (reduced.C_ms @ state.p))
