"""Structured fine triangulation of the unit square and its coarse block overlay.

Vertex ``k = j*(n+1) + i`` sits at ``(i/n, j/n)``.  Fine cell ``(i, j)`` is split
along its lower-left to upper-right diagonal into triangles ``2*(j*n+i)`` and
``2*(j*n+i)+1``.  Displacement DOFs are interleaved: ``2*k + c`` for component c.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True, eq=False)
class FineMesh:
    n: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertex_flags: np.ndarray

    @property
    def h(self) -> float:
        return np.sqrt(2.0) / self.n

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_vertex_flags)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def gradients(self) -> np.ndarray:
        """Gradients of the three P1 shape functions, shape (ntri, 3, 2)."""
        p = self.vertices[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_area = 2.0 * self.areas
        g = np.empty((self.n_triangles, 3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            g[:, a, 0] = (y[:, b] - y[:, c]) / two_area
            g[:, a, 1] = (x[:, c] - x[:, b]) / two_area
        return g

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def vertex_id(self, i, j):
        return np.asarray(j) * (self.n + 1) + np.asarray(i)

    def cell_of_triangle(self, t):
        return np.asarray(t) // 2


def build_fine_mesh(n: int) -> FineMesh:
    if int(n) != n or n < 2:
        raise InvalidArgument(f"fine mesh needs n >= 2 cells per side, got {n}")
    n = int(n)
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    vertices = np.column_stack([ii.ravel() / n, jj.ravel() / n])
    ci, cj = np.meshgrid(np.arange(n), np.arange(n))
    ci, cj = ci.ravel(), cj.ravel()
    v00 = cj * (n + 1) + ci
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v00, v10, v11])
    tris[1::2] = np.column_stack([v00, v11, v01])
    ib, jb = ii.ravel(), jj.ravel()
    boundary = (ib == 0) | (ib == n) | (jb == 0) | (jb == n)
    return FineMesh(n, vertices, tris, boundary)


@dataclass(frozen=True, eq=False)
class CoarsePartition:
    mesh: FineMesh
    N: int
    block_of_triangle: np.ndarray

    @property
    def H(self) -> float:
        return np.sqrt(2.0) / self.N

    @property
    def ratio(self) -> int:
        """Fine cells per coarse block side."""
        return self.mesh.n // self.N

    @property
    def n_blocks(self) -> int:
        return self.N * self.N

    @property
    def interior_coarse_nodes(self) -> list[tuple[int, int]]:
        return [(I, J) for J in range(1, self.N) for I in range(1, self.N)]

    @cached_property
    def blocks(self) -> list[np.ndarray]:
        order = np.argsort(self.block_of_triangle, kind="stable")
        counts = np.bincount(self.block_of_triangle, minlength=self.n_blocks)
        return np.split(order, np.cumsum(counts)[:-1])

    def block_coords(self, b: int) -> tuple[int, int]:
        return b % self.N, b // self.N

    def block_cell_range(self, b: int) -> tuple[int, int, int, int]:
        bx, by = self.block_coords(b)
        r = self.ratio
        return bx * r, (bx + 1) * r, by * r, (by + 1) * r

    def block_vertices(self, b: int) -> np.ndarray:
        """All fine vertices of the closed block, in lexicographic order."""
        return _rect_vertices(self.mesh, *self.block_cell_range(b), closed=True)


def _rect_vertices(mesh: FineMesh, x0, x1, y0, y1, closed):
    if closed:
        ii, jj = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    else:
        ii, jj = np.meshgrid(np.arange(x0 + 1, x1), np.arange(y0 + 1, y1))
    return mesh.vertex_id(ii.ravel(), jj.ravel())


def build_coarse_partition(mesh: FineMesh, N: int) -> CoarsePartition:
    if int(N) != N or N < 1:
        raise InvalidArgument(f"coarse partition needs N >= 1, got {N}")
    N = int(N)
    if mesh.n % N:
        raise InvalidArgument(f"N={N} does not divide fine n={mesh.n}")
    r = mesh.n // N
    cell = np.arange(mesh.n_triangles) // 2
    ci, cj = cell % mesh.n, cell // mesh.n
    block = (cj // r) * N + (ci // r)
    return CoarsePartition(mesh, N, block)


@dataclass(frozen=True, eq=False)
class OversampledPatch:
    center_block: int
    layers: int
    block_set: np.ndarray
    cell_range: tuple[int, int, int, int]
    interior_vertices: np.ndarray = field(repr=False)

    @property
    def interior_fine_dofs(self) -> np.ndarray:
        """Interior vertex ids; pair with :func:`vector_dofs` for displacement."""
        return self.interior_vertices


def vector_dofs(vertices: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices)
    return np.column_stack([2 * v, 2 * v + 1]).ravel()


def oversample(part: CoarsePartition, i: int, m: int) -> OversampledPatch:
    if not 0 <= i < part.n_blocks:
        raise IndexError(f"block index {i} out of range for {part.n_blocks} blocks")
    if m < 0:
        raise InvalidArgument(f"layers must be >= 0, got {m}")
    N = part.N
    bx, by = part.block_coords(i)
    # closure-touching neighbours include diagonal ones, so the patch stays a rectangle
    x0, x1 = max(bx - m, 0), min(bx + m, N - 1)
    y0, y1 = max(by - m, 0), min(by + m, N - 1)
    gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    block_set = (gy * N + gx).ravel()
    r = part.ratio
    cells = (x0 * r, (x1 + 1) * r, y0 * r, (y1 + 1) * r)
    interior = _rect_vertices(part.mesh, *cells, closed=False)
    return OversampledPatch(i, m, block_set, cells, interior)
