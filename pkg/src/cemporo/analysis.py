"""Relative error metrics and convergence studies over H, m and J."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cem import build_multiscale_space
from .errors import InvalidArgument, UndefinedMetricError
from .fem import (OperatorSet, PoroState, TimeGrid, assemble_mass, assemble_operators,
                  assemble_vector_mass, run_fine_solver)
from .mesh import build_coarse_partition
from .ms_solver import reduce_operators, run_ms_solver
from .spectral import build_auxiliary_spaces

log = logging.getLogger(__name__)

CSV_COLUMNS = ["H", "N", "m", "J", "seed", "e_u_L2", "e_u_a", "e_p_L2", "e_p_b", "rate_u_a", "rate_p_b"]


@dataclass(frozen=True)
class ErrorReport:
    e_u_L2: float
    e_u_a: float
    e_p_L2: float
    e_p_b: float
    meta: dict = field(default_factory=dict, compare=False)


def _ratio(num2, den2, name):
    if den2 <= 0.0:
        raise UndefinedMetricError(f"{name}: reference solution has zero norm")
    return math.sqrt(max(num2, 0.0) / den2)


def compute_errors(fine: PoroState, ms: PoroState, ops: OperatorSet, medium=None, **meta) -> ErrorReport:
    """Relative weighted L2 and energy errors of ``ms`` against the fine reference."""
    medium = medium or ops.medium
    w_u = medium.elastic_weight
    w_p = medium.mobility
    # the weight multiplies the function inside the norm, hence the squared weight
    Mu = assemble_vector_mass(ops.mesh, w_u ** 2)
    Mp = assemble_mass(ops.mesh, w_p ** 2)
    du, dp = ms.u - fine.u, ms.p - fine.p
    return ErrorReport(
        _ratio(du @ (Mu @ du), fine.u @ (Mu @ fine.u), "e_u_L2"),
        _ratio(du @ (ops.A @ du), fine.u @ (ops.A @ fine.u), "e_u_a"),
        _ratio(dp @ (Mp @ dp), fine.p @ (Mp @ fine.p), "e_p_L2"),
        _ratio(dp @ (ops.B @ dp), fine.p @ (ops.B @ fine.p), "e_p_b"),
        dict(meta),
    )


def layers_for_H(H: float) -> int:
    """Oversampling layers ``floor(4 log(H) / log(sqrt(2)/10))``: 4, 5, 6 for sqrt(2)/10, /20, /40."""
    if not 0.0 < H < 1.0:
        raise InvalidArgument(f"H must lie in (0, 1), got {H}")
    x = 4.0 * math.log(H) / math.log(math.sqrt(2.0) / 10.0)
    return int(math.floor(x + 1e-9))


def observed_rate(e_coarse: float, e_fine: float) -> float:
    """Convergence rate between H and H/2."""
    return math.log2(e_coarse / e_fine)


@dataclass(frozen=True)
class StudyRow:
    H: float
    N: int
    m: int
    J: int
    seed: object
    report: ErrorReport
    rate_u_a: float | None = None
    rate_p_b: float | None = None

    @property
    def key(self):
        return (self.H, self.m, self.J, self.seed)


@dataclass
class StudyTable:
    rows: list = field(default_factory=list)

    def add(self, row: StudyRow):
        if any(r.key == row.key for r in self.rows):
            raise InvalidArgument(f"duplicate study row {row.key}")
        self.rows.append(row)

    def column(self, name):
        return [getattr(r.report, name) for r in self.rows]

    def with_rates(self) -> "StudyTable":
        """Rates between successive rows (rows sorted by decreasing H)."""
        rows = sorted(self.rows, key=lambda r: -r.H)
        out = StudyTable()
        for k, r in enumerate(rows):
            if k == 0:
                out.rows.append(r)
                continue
            prev = rows[k - 1]
            scale = math.log2(prev.H / r.H)
            ru = math.log(prev.report.e_u_a / r.report.e_u_a) / math.log(2) / scale
            rp = math.log(prev.report.e_p_b / r.report.e_p_b) / math.log(2) / scale
            out.rows.append(StudyRow(r.H, r.N, r.m, r.J, r.seed, r.report, ru, rp))
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(CSV_COLUMNS)
            for r in self.rows:
                e = r.report
                out.writerow([repr(r.H), r.N, r.m, r.J, "" if r.seed is None else r.seed,
                              repr(e.e_u_L2), repr(e.e_u_a), repr(e.e_p_L2), repr(e.e_p_b),
                              "" if r.rate_u_a is None else repr(r.rate_u_a),
                              "" if r.rate_p_b is None else repr(r.rate_p_b)])


class Study:
    """Fixed fine problem (mesh, medium, time grid, data) with a cached reference solution.

    Auxiliary spaces are cached per coarse N at the largest J requested so far;
    smaller J reuse them by truncation, since adding eigenpairs never changes
    earlier ones.
    """

    def __init__(self, mesh, medium, timegrid: TimeGrid, f=1.0, p0=None, threads=None, seed=None):
        self.mesh, self.medium, self.timegrid = mesh, medium, timegrid
        self.f = f
        self.p0 = p0 if p0 is not None else default_initial_pressure
        self.threads = threads
        self.seed = seed if seed is not None else medium.seed
        self.ops = assemble_operators(mesh, medium)
        self._reference = None
        self._aux = {}

    @property
    def reference(self) -> list[PoroState]:
        if self._reference is None:
            log.info("fine reference: n=%d, %d steps", self.mesh.n, self.timegrid.n_steps)
            self._reference = run_fine_solver(self.mesh, self.medium, self.timegrid, self.f, self.p0, self.ops)
        return self._reference

    @property
    def p_h0(self):
        return self.reference[0].p

    def partition(self, N):
        return build_coarse_partition(self.mesh, N)

    def auxiliary(self, N, J):
        cached = self._aux.get(N)
        if cached is None or cached.u.J < J:
            cached = build_auxiliary_spaces(self.ops, self.partition(N), J, threads=self.threads)
            self._aux[N] = cached
        return cached if cached.u.J == J else cached.truncated(J)

    def solve(self, N, m, J):
        part = self.partition(N)
        space = build_multiscale_space(self.ops, self.auxiliary(N, J), part, m, threads=self.threads)
        reduced = reduce_operators(self.ops, space)
        return run_ms_solver(reduced, self.timegrid, self.f, self.p_h0)

    def errors(self, N, m, J) -> ErrorReport:
        ms = self.solve(N, m, J)
        rep = compute_errors(self.reference[-1], ms.final, self.ops, N=N, m=m, J=J)
        log.info("N=%d m=%d J=%d: e_u_a=%.3e e_p_b=%.3e", N, m, J, rep.e_u_a, rep.e_p_b)
        return rep

    def row(self, N, m, J) -> StudyRow:
        return StudyRow(math.sqrt(2.0) / N, N, m, J, self.seed, self.errors(N, m, J))


def default_initial_pressure(x, y):
    return x * (1 - x) * y * (1 - y)


def sweep_H(study: Study, Ns, J=4, m="auto") -> StudyTable:
    table = StudyTable()
    for N in Ns:
        layers = layers_for_H(math.sqrt(2.0) / N) if m == "auto" else int(m)
        table.add(study.row(N, layers, J))
    return table.with_rates()


def sweep_m(study: Study, N, ms, J=4) -> StudyTable:
    table = StudyTable()
    study.auxiliary(N, J)
    for m in ms:
        table.add(study.row(N, m, J))
    return table


def sweep_J(study: Study, N, m, Js) -> StudyTable:
    table = StudyTable()
    study.auxiliary(N, max(Js))
    for J in Js:
        table.add(study.row(N, m, J))
    return table


# 6-point degree-4 rule on the reference triangle (barycentric weights sum to 1)
_A1, _B1, _W1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
_A2, _B2, _W2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
_QUAD_BARY = np.array([[_A1, _A1, _B1], [_A1, _B1, _A1], [_B1, _A1, _A1],
                       [_A2, _A2, _B2], [_A2, _B2, _A2], [_B2, _A2, _A2]])
_QUAD_W = np.array([_W1] * 3 + [_W2] * 3)


def exact_error_norms(mesh, nodal, exact, exact_grad):
    """L2 and H1-seminorm errors of a P1 nodal field against an exact function.

    ``exact(x, y)`` returns values, ``exact_grad(x, y)`` a pair of partial derivatives.
    """
    T = mesh.triangles
    P = mesh.vertices[T]
    qp = np.einsum("qa,tad->tqd", _QUAD_BARY, P)
    uh = np.einsum("qa,ta->tq", _QUAD_BARY, nodal[T])
    gh = np.einsum("ta,tad->td", nodal[T], mesh.gradients)
    ue = exact(qp[..., 0], qp[..., 1])
    gx, gy = exact_grad(qp[..., 0], qp[..., 1])
    w = mesh.areas[:, None] * _QUAD_W[None, :]
    l2 = np.sqrt((w * (ue - uh) ** 2).sum())
    h1 = np.sqrt((w * ((gx - gh[:, None, 0]) ** 2 + (gy - gh[:, None, 1]) ** 2)).sum())
    return l2, h1
