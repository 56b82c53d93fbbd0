import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cemporo.errors import InvalidArgument
from cemporo.mesh import build_coarse_partition, build_fine_mesh, oversample


def test_small_mesh_counts():
    mesh = build_fine_mesh(2)
    assert mesh.n_vertices == 9
    assert mesh.n_triangles == 8
    assert (~mesh.boundary_vertex_flags).sum() == 1


def test_fine_mesh_size():
    assert build_fine_mesh(200).h == pytest.approx(np.sqrt(2) / 200, rel=1e-15)


@pytest.mark.parametrize("n", [2, 4, 7])
def test_mesh_invariants(n):
    mesh = build_fine_mesh(n)
    assert mesh.n_vertices == (n + 1) ** 2
    assert mesh.n_triangles == 2 * n * n
    np.testing.assert_allclose(mesh.areas, 1 / (2 * n * n), rtol=1e-12)
    assert (mesh.areas > 0).all()
    assert mesh.areas.sum() == pytest.approx(1.0)
    x, y = mesh.vertices.T
    on_edge = np.isclose(x, 0) | np.isclose(x, 1) | np.isclose(y, 0) | np.isclose(y, 1)
    np.testing.assert_array_equal(on_edge, mesh.boundary_vertex_flags)


def test_p1_gradients_reproduce_linear_functions():
    mesh = build_fine_mesh(5)
    x, y = mesh.vertices.T
    g = np.einsum("ta,tad->td", (3 * x - 2 * y)[mesh.triangles], mesh.gradients)
    np.testing.assert_allclose(g, np.tile([3.0, -2.0], (mesh.n_triangles, 1)), atol=1e-12)


def test_bad_n():
    with pytest.raises(InvalidArgument):
        build_fine_mesh(1)


def test_coarse_partition_counts():
    part = build_coarse_partition(build_fine_mesh(200), 10)
    assert part.H == pytest.approx(np.sqrt(2) / 10)
    assert all(len(b) == 800 for b in part.blocks)

    part = build_coarse_partition(build_fine_mesh(4), 4)
    assert all(len(b) == 2 for b in part.blocks)
    assert len(part.interior_coarse_nodes) == 9


def test_coarse_partition_requires_divisibility():
    with pytest.raises(InvalidArgument):
        build_coarse_partition(build_fine_mesh(4), 3)


def test_blocks_partition_triangles():
    mesh = build_fine_mesh(12)
    part = build_coarse_partition(mesh, 3)
    allt = np.concatenate(part.blocks)
    assert len(allt) == mesh.n_triangles
    assert len(np.unique(allt)) == mesh.n_triangles
    # each block's triangles have centroids inside the block square
    for b, tris in enumerate(part.blocks):
        bx, by = part.block_coords(b)
        c = mesh.centroids[tris]
        assert ((c[:, 0] > bx / 3) & (c[:, 0] < (bx + 1) / 3)).all()
        assert ((c[:, 1] > by / 3) & (c[:, 1] < (by + 1) / 3)).all()


def _touching_blocks_bruteforce(N, current):
    """Blocks whose closed squares meet the closure of the union ``current``."""
    out = set()
    for b in range(N * N):
        bx, by = b % N, b // N
        for c in current:
            cx, cy = c % N, c // N
            if abs(bx - cx) <= 1 and abs(by - cy) <= 1:
                out.add(b)
    return out


def test_oversample_enumeration():
    part = build_coarse_partition(build_fine_mesh(10), 5)
    assert set(oversample(part, 12, 1).block_set) == _touching_blocks_bruteforce(5, {12})
    assert len(oversample(part, 12, 1).block_set) == 9
    assert len(oversample(part, 0, 1).block_set) == 4
    for b in (0, 7, 12):
        assert list(oversample(part, b, 0).block_set) == [b]


def test_oversample_recursive_definition():
    part = build_coarse_partition(build_fine_mesh(12), 6)
    for b in (0, 9, 14, 35):
        current = {b}
        for m in range(1, 8):
            current = _touching_blocks_bruteforce(6, current)
            assert set(oversample(part, b, m).block_set) == current


def test_patch_interior_dofs_exclude_patch_boundary():
    mesh = build_fine_mesh(12)
    part = build_coarse_partition(mesh, 4)
    patch = oversample(part, 5, 1)
    x0, x1, y0, y1 = (c / 12 for c in patch.cell_range)
    xy = mesh.vertices[patch.interior_vertices]
    assert ((xy[:, 0] > x0) & (xy[:, 0] < x1) & (xy[:, 1] > y0) & (xy[:, 1] < y1)).all()
    assert len(patch.interior_vertices) == (9 - 1) * (9 - 1)


def test_saturated_patch_is_whole_domain():
    mesh = build_fine_mesh(8)
    part = build_coarse_partition(mesh, 4)
    for b in range(16):
        patch = oversample(part, b, 8)
        assert len(patch.block_set) == 16
        np.testing.assert_array_equal(np.sort(patch.interior_vertices), mesh.interior_vertices)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.data())
def test_oversample_monotone(N, data):
    part = build_coarse_partition(build_fine_mesh(2 * N), N)
    b = data.draw(st.integers(0, N * N - 1))
    m = data.draw(st.integers(0, 2 * N))
    small = set(oversample(part, b, m).block_set)
    big = set(oversample(part, b, m + 1).block_set)
    assert small <= big


def test_oversample_bad_index():
    part = build_coarse_partition(build_fine_mesh(4), 2)
    with pytest.raises(IndexError):
        oversample(part, 4, 1)
    with pytest.raises(InvalidArgument):
        oversample(part, 0, -1)
