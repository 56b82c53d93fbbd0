import numpy as np
import pytest

from cemporo.errors import FormatError, InvalidArgument
from cemporo.medium import (OMEGA_1, OMEGA_2, generate_channel_medium, generate_fracture_medium,
                            lame_from_E_nu, load_medium, save_medium)
from cemporo.mesh import build_coarse_partition, build_fine_mesh


@pytest.fixture(scope="module")
def grid():
    mesh = build_fine_mesh(40)
    return mesh, build_coarse_partition(mesh, 8)


def test_lame_values():
    lam, mu = lame_from_E_nu(1.0, 0.2)
    # 0.2 / (0.6 * 1.2) and 1 / 2.4
    assert lam == pytest.approx(0.2 / 0.72, rel=1e-15)
    assert lam == pytest.approx(0.277777777777, rel=1e-10)
    assert mu == pytest.approx(0.416666666666, rel=1e-10)
    lam4, mu4 = lame_from_E_nu(1e4, 0.2)
    assert lam4 == pytest.approx(1e4 * lam) and mu4 == pytest.approx(1e4 * mu)


@pytest.mark.parametrize("nu_p", [0.5, -1.0, 0.7])
def test_lame_rejects_bad_poisson(nu_p):
    with pytest.raises(InvalidArgument):
        lame_from_E_nu(1.0, nu_p)


@pytest.mark.parametrize("gen", [generate_channel_medium, generate_fracture_medium])
def test_generated_media_invariants(grid, gen):
    mesh, part = grid
    med, labels = gen(mesh, part, 1e4, seed=3)
    assert med.kappa.max() / med.kappa.min() == pytest.approx(1e4)
    assert len(np.unique(med.kappa)) == 2
    assert 0 < (labels == OMEGA_2).mean() < 1
    np.testing.assert_array_equal(med.kappa == 1e4, labels == OMEGA_2)
    lam, mu = lame_from_E_nu(med.kappa, 0.2)   # E equals kappa
    np.testing.assert_array_equal(med.lam, lam)
    np.testing.assert_array_equal(med.mu, mu)
    assert (med.alpha >= 0.5).all() and (med.alpha <= 1).all()
    for tris in part.blocks:
        assert np.ptp(med.alpha[tris]) == 0.0
    assert (med.mu > 0).all() and (med.lam > 0).all() and (med.kappa > 0).all()


def test_channel_geometry_is_axis_aligned_bars(grid):
    mesh, part = grid
    _, labels = generate_channel_medium(mesh, part, 1e4, seed=1)
    cells = labels[0::2].reshape(mesh.n, mesh.n) == OMEGA_2
    np.testing.assert_array_equal(labels[0::2], labels[1::2])
    from scipy.ndimage import label
    comps, k = label(cells, structure=np.ones((3, 3)))
    assert k >= 3  # isolated bars do not merge
    for c in range(1, k + 1):
        jj, ii = np.nonzero(comps == c)
        assert min(np.ptp(ii), np.ptp(jj)) == 0  # width one cell
    longest = max(max(np.ptp(np.nonzero(comps == c)[0]), np.ptp(np.nonzero(comps == c)[1])) + 1
                  for c in range(1, k + 1))
    assert longest > 2 * part.ratio  # spans several coarse blocks


def test_contrast_one_is_homogeneous(grid):
    mesh, part = grid
    med, labels = generate_channel_medium(mesh, part, 1.0, seed=0)
    assert np.ptp(med.kappa) == 0 and np.ptp(med.mu) == 0
    assert (labels == OMEGA_2).any()


def test_same_seed_same_alpha(grid):
    mesh, part = grid
    a, _ = generate_channel_medium(mesh, part, 1e4, seed=11)
    b, _ = generate_fracture_medium(mesh, part, 1e4, seed=11)
    np.testing.assert_array_equal(a.alpha, b.alpha)
    c, _ = generate_channel_medium(mesh, part, 1e4, seed=12)
    assert not np.array_equal(a.alpha, c.alpha)


def test_fracture_seeds_differ(grid):
    mesh, part = grid
    _, la = generate_fracture_medium(mesh, part, 1e4, seed=0)
    _, lb = generate_fracture_medium(mesh, part, 1e4, seed=1)
    assert not np.array_equal(la, lb)
    _, la2 = generate_fracture_medium(mesh, part, 1e4, seed=0)
    np.testing.assert_array_equal(la, la2)


def test_zero_fractures(grid):
    mesh, part = grid
    med, labels = generate_fracture_medium(mesh, part, 1e4, seed=0, n_fractures=0)
    assert (labels == OMEGA_1).all()
    assert (med.kappa == 1.0).all()


def test_round_trip(grid, tmp_path):
    mesh, part = grid
    med, _ = generate_fracture_medium(mesh, part, 1e4, seed=5)
    path = tmp_path / "m.txt"
    save_medium(med, path)
    header = path.read_text().splitlines()[0]
    assert header.startswith("poro-medium v1 n=40 fields=mu,lambda,kappa,alpha M=1.0 nu=1.0")
    back = load_medium(path, mesh)
    for name in ("mu", "lam", "kappa", "alpha"):
        np.testing.assert_array_equal(getattr(back, name), getattr(med, name))
    assert back.M == med.M and back.nu == med.nu
    assert back.meta["contrast"] == 1e4
    assert back.meta["rng"] == "philox"
    assert back.seed == 5


def test_load_rejects_wrong_size(grid, tmp_path):
    mesh, part = grid
    med, _ = generate_channel_medium(mesh, part, 10.0, seed=0)
    path = tmp_path / "m.txt"
    save_medium(med, path)
    lines = path.read_text().splitlines()
    (tmp_path / "short.txt").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(FormatError):
        load_medium(tmp_path / "short.txt")
    with pytest.raises(FormatError):
        load_medium(path, build_fine_mesh(20))


def test_load_rejects_garbage(tmp_path):
    (tmp_path / "bad.txt").write_text("not a medium\n1 2 3 4\n")
    with pytest.raises(FormatError):
        load_medium(tmp_path / "bad.txt")
    (tmp_path / "bad2.txt").write_text("poro-medium v1 n=1 fields=mu,lambda,kappa,alpha M=1 nu=1\n"
                                       "1 1 1 x\n1 1 1 1\n")
    with pytest.raises(FormatError):
        load_medium(tmp_path / "bad2.txt")
