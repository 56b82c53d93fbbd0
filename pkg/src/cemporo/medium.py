"""Piecewise-constant coefficient fields on the fine triangles.

Generated media follow a two-subdomain layout: background ``Omega_1`` with
kappa = E = 1 and inclusions ``Omega_2`` with kappa = E = contrast.  The
Biot-Willis coefficient is drawn from U[0.5, 1] once per coarse block.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument
from .mesh import CoarsePartition, FineMesh

RNG_NAME = "philox"
OMEGA_1, OMEGA_2 = 1, 2


@dataclass(frozen=True, eq=False)
class Medium:
    mu: np.ndarray
    lam: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray
    M: float = 1.0
    nu: float = 1.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = {len(self.mu), len(self.lam), len(self.kappa), len(self.alpha)}
        if len(sizes) != 1:
            raise InvalidArgument(f"coefficient fields have mismatched lengths {sorted(sizes)}")

    @property
    def n_triangles(self) -> int:
        return len(self.mu)

    @property
    def elastic_weight(self) -> np.ndarray:
        """lambda + 2 mu, the weight of the displacement L2 error and of sigma-tilde."""
        return self.lam + 2.0 * self.mu

    @property
    def mobility(self) -> np.ndarray:
        return self.kappa / self.nu

    def check_mesh(self, mesh: FineMesh):
        if self.n_triangles != mesh.n_triangles:
            raise InvalidArgument(
                f"medium has {self.n_triangles} triangles, mesh has {mesh.n_triangles}")


def lame_from_E_nu(E, nu_p):
    """Return ``(lambda, mu)`` for Young's modulus E and Poisson ratio nu_p."""
    if not -1.0 < nu_p < 0.5:
        raise InvalidArgument(f"Poisson ratio must lie in (-1, 1/2), got {nu_p}")
    E = np.asarray(E, dtype=float) if np.ndim(E) else float(E)
    lam = nu_p * E / ((1.0 - 2.0 * nu_p) * (1.0 + nu_p))
    mu = E / (2.0 * (1.0 + nu_p))
    return lam, mu


def homogeneous_medium(mesh: FineMesh, E=1.0, nu_p=0.2, kappa=1.0, alpha=1.0, M=1.0, nu=1.0) -> Medium:
    nt = mesh.n_triangles
    lam, mu = lame_from_E_nu(E, nu_p)
    return Medium(np.full(nt, mu), np.full(nt, lam), np.full(nt, float(kappa)),
                  np.full(nt, float(alpha)), M, nu, meta={"generator": "homogeneous"})


def _streams(seed):
    alpha_seq, geometry_seq = np.random.SeedSequence(seed).spawn(2)
    return (np.random.Generator(np.random.Philox(alpha_seq)),
            np.random.Generator(np.random.Philox(geometry_seq)))


def _block_alpha(part: CoarsePartition, rng) -> np.ndarray:
    per_block = rng.uniform(0.5, 1.0, size=part.n_blocks)
    return per_block[part.block_of_triangle]


def medium_from_mask(mesh, part, cell_mask, contrast, seed, nu_p=0.2, M=1.0, nu=1.0, generator="mask"):
    """Build a two-subdomain medium from a boolean (n, n) mask of Omega_2 cells.

    ``cell_mask[j, i]`` refers to fine cell (i, j).  Returns ``(medium, labels)``
    with per-triangle labels in {OMEGA_1, OMEGA_2}.
    """
    if contrast < 1:
        raise InvalidArgument(f"contrast must be >= 1, got {contrast}")
    cell_mask = np.asarray(cell_mask, dtype=bool)
    if cell_mask.shape != (mesh.n, mesh.n):
        raise InvalidArgument(f"mask shape {cell_mask.shape} does not match n={mesh.n}")
    tri_in = np.repeat(cell_mask.ravel(), 2)
    labels = np.where(tri_in, OMEGA_2, OMEGA_1)
    kappa = np.where(tri_in, float(contrast), 1.0)
    lam, mu = lame_from_E_nu(kappa, nu_p)  # E equals kappa
    alpha_rng, _ = _streams(seed)
    alpha = _block_alpha(part, alpha_rng)
    meta = {"generator": generator, "contrast": float(contrast), "rng": RNG_NAME,
            "seed": seed, "nu_p": nu_p, "alpha_N": part.N}
    return Medium(mu, lam, kappa, alpha, M, nu, seed, meta), labels


def channel_mask(n, seed, n_long=3, n_short=6, width=1, long_len=(0.5, 0.8), short_len=(0.1, 0.25),
                 max_tries=2000):
    """Isolated horizontal/vertical bars of ``width`` fine cells."""
    _, rng = _streams(seed)
    mask = np.zeros((n, n), dtype=bool)
    margin = max(1, n // 20)
    specs = [long_len] * n_long + [short_len] * n_short
    for lo, hi in specs:
        for _ in range(max_tries):
            length = max(2, int(round(rng.uniform(lo, hi) * n)))
            length = min(length, n - 2 * margin)
            vertical = bool(rng.integers(2))
            across = int(rng.integers(margin, n - margin - width + 1))
            along = int(rng.integers(margin, n - margin - length + 1))
            if vertical:
                rows, cols = slice(along, along + length), slice(across, across + width)
            else:
                rows, cols = slice(across, across + width), slice(along, along + length)
            halo = mask[max(rows.start - 1, 0):rows.stop + 1, max(cols.start - 1, 0):cols.stop + 1]
            if not halo.any():
                mask[rows, cols] = True
                break
    return mask


def fracture_mask(n, seed, n_fractures=10, length=(0.15, 0.45)):
    """Randomly placed one-cell-wide segments, axis-aligned or slanted."""
    _, rng = _streams(seed)
    mask = np.zeros((n, n), dtype=bool)
    angles = np.deg2rad([0.0, 90.0, 45.0, 135.0])
    for _ in range(n_fractures):
        ell = rng.uniform(*length)
        theta = angles[rng.integers(len(angles))] + rng.uniform(-0.15, 0.15) * rng.integers(2)
        cx, cy = rng.uniform(0.1, 0.9, size=2)
        d = 0.5 * ell * np.array([np.cos(theta), np.sin(theta)])
        s = np.linspace(-1.0, 1.0, int(np.ceil(4 * ell * n)) + 2)
        pts = np.array([cx, cy]) + s[:, None] * d
        pts = pts[(pts > 0.0).all(axis=1) & (pts < 1.0).all(axis=1)]
        ij = np.minimum((pts * n).astype(int), n - 1)
        mask[ij[:, 1], ij[:, 0]] = True
    return mask


def generate_channel_medium(mesh, part, contrast=1e4, seed=0, **kwargs):
    mask = channel_mask(mesh.n, seed, **{k: kwargs.pop(k) for k in list(kwargs)
                                          if k in ("n_long", "n_short", "width")})
    return medium_from_mask(mesh, part, mask, contrast, seed, generator="channel", **kwargs)


def generate_fracture_medium(mesh, part, contrast=1e4, seed=0, **kwargs):
    mask = fracture_mask(mesh.n, seed, **{k: kwargs.pop(k) for k in list(kwargs)
                                           if k in ("n_fractures", "length")})
    return medium_from_mask(mesh, part, mask, contrast, seed, generator="fracture", **kwargs)


_HEADER = re.compile(r"^poro-medium v1 (.*)$")
_FIELDS = "mu,lambda,kappa,alpha"


def save_medium(medium: Medium, path):
    n = int(round(np.sqrt(medium.n_triangles / 2)))
    extra = " ".join(f"{k}={v}" for k, v in medium.meta.items() if k not in ("n", "fields", "M", "nu"))
    header = f"poro-medium v1 n={n} fields={_FIELDS} M={medium.M!r} nu={medium.nu!r}"
    if extra:
        header += " " + extra
    data = np.column_stack([medium.mu, medium.lam, medium.kappa, medium.alpha])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        fh.writelines(" ".join(repr(float(x)) for x in row) + "\n" for row in data)


def _coerce(v):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return None if v == "None" else v


def load_medium(path, mesh: FineMesh | None = None) -> Medium:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    m = _HEADER.match(lines[0].strip())
    if m is None:
        raise FormatError(f"{path}: missing 'poro-medium v1' header")
    try:
        kv = dict(tok.split("=", 1) for tok in m.group(1).split())
        n = int(kv.pop("n"))
        fields = kv.pop("fields")
        M, nu = float(kv.pop("M")), float(kv.pop("nu"))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from None
    if fields != _FIELDS:
        raise FormatError(f"{path}: unsupported field list {fields!r}")
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != 2 * n * n:
        raise FormatError(f"{path}: expected {2 * n * n} triangle rows for n={n}, found {len(rows)}")
    if mesh is not None and mesh.n_triangles != 2 * n * n:
        raise FormatError(f"{path}: file is for n={n}, mesh has n={mesh.n}")
    try:
        data = np.array([[float(x) for x in ln.split()] for ln in rows])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != 4:
        raise FormatError(f"{path}: every row needs four values")
    if not (data[:, :3] > 0).all():
        raise FormatError(f"{path}: mu, lambda and kappa must be positive")
    meta = {k: _coerce(v) for k, v in kv.items()}
    seed = meta.get("seed")
    return Medium(data[:, 0].copy(), data[:, 1].copy(), data[:, 2].copy(), data[:, 3].copy(),
                  M, nu, seed if isinstance(seed, int) else None, meta)
