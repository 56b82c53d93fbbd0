"""Command-line driver: fine reference runs, multiscale solves, parameter sweeps and basis export."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import Study, StudyRow, StudyTable, compute_errors, layers_for_H, sweep_H, sweep_J, sweep_m
from .cem import basis_fields, solve_cem_basis
from .errors import ConfigError
from .fem import TimeGrid, energy, export_fields, state_fields
from .medium import generate_channel_medium, generate_fracture_medium, homogeneous_medium, load_medium
from .mesh import build_coarse_partition, build_fine_mesh, oversample
from .spectral import write_eigenvalues_csv

log = logging.getLogger("cemporo")

MODES = ("reference", "multiscale", "sweep-H", "sweep-m", "sweep-J", "export-basis")
GENERATORS = ("channel", "fracture", "homogeneous")


@dataclass
class RunConfig:
    mode: str = "multiscale"
    fine_n: int = 80
    coarse_N: int = 16
    layers_m: object = "auto"
    basis_J: int = 4
    tau: float = 5.0
    T: float = 100.0
    medium: str = "channel"
    contrast: float = 1e4
    seed: int = 0
    M: float = 1.0
    nu: float = 1.0
    nu_p: float = 0.2
    f: float = 1.0
    out: str = "cemporo-out"
    threads: int | None = None
    sweep_N: list = field(default_factory=lambda: [4, 8, 16])
    sweep_m: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    sweep_J: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6, 7, 8])
    block: int | None = None

    @property
    def layers(self) -> int:
        if self.layers_m == "auto":
            return layers_for_H(math.sqrt(2.0) / self.coarse_N)
        return int(self.layers_m)

    def echo(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"


_ALIASES = {"fine-n": "fine_n", "n": "fine_n", "coarse-N": "coarse_N", "N": "coarse_N",
            "layers": "layers_m", "m": "layers_m", "basis-J": "basis_J", "J": "basis_J"}


def _int(name, v):
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected an integer, got {v!r}") from None
    if not x.is_integer():
        raise ConfigError(name, f"expected an integer, got {v!r}")
    return int(x)


def _float(name, v):
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected a number, got {v!r}") from None
    if not math.isfinite(x):
        raise ConfigError(name, f"must be finite, got {v!r}")
    return x


def _int_list(name, v):
    if isinstance(v, (list, tuple)):
        items = list(v)
    else:
        items = [s for s in str(v).replace(",", " ").split() if s]
    if not items:
        raise ConfigError(name, "empty list")
    return [_int(name, s) for s in items]


def read_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    for k, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{k}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[_ALIASES.get(key, key.replace("-", "_"))] = value
    return out


def parse_config(path=None, overrides=None) -> RunConfig:
    """Merge defaults, an optional ``key = value`` file and explicit overrides, then validate."""
    values = read_config_file(path) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")
    cfg = RunConfig()
    for key, v in values.items():
        if key in ("fine_n", "coarse_N", "basis_J", "seed"):
            v = _int(key, v)
        elif key == "threads":
            v = None if v in ("", "auto") else _int(key, v)
        elif key == "block":
            v = None if v == "" else _int(key, v)
        elif key in ("tau", "T", "contrast", "M", "nu", "nu_p", "f"):
            v = _float(key, v)
        elif key == "layers_m":
            v = "auto" if str(v).strip() == "auto" else _int(key, v)
        elif key in ("sweep_N", "sweep_m", "sweep_J"):
            v = _int_list(key, v)
        else:
            v = str(v)
        setattr(cfg, key, v)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.mode not in MODES:
        raise ConfigError("mode", f"must be one of {', '.join(MODES)}")
    if cfg.fine_n < 2:
        raise ConfigError("fine_n", f"must be >= 2, got {cfg.fine_n}")
    if cfg.coarse_N < 1 or cfg.fine_n % cfg.coarse_N:
        raise ConfigError("coarse_N", f"{cfg.coarse_N} does not divide fine_n={cfg.fine_n}")
    for N in cfg.sweep_N if cfg.mode == "sweep-H" else ():
        if N < 2 or cfg.fine_n % N:
            raise ConfigError("sweep_N", f"{N} does not divide fine_n={cfg.fine_n}")
    if cfg.layers_m != "auto" and cfg.layers_m < 0:
        raise ConfigError("layers_m", "must be >= 0 or 'auto'")
    if cfg.mode in ("multiscale", "export-basis") and cfg.layers_m == "auto" and cfg.coarse_N < 2:
        raise ConfigError("layers_m", "'auto' needs coarse_N >= 2")
    if min(cfg.sweep_m) < 0:
        raise ConfigError("sweep_m", "layer counts must be >= 0")
    if cfg.basis_J < 1 or min(cfg.sweep_J) < 1:
        raise ConfigError("basis_J" if cfg.basis_J < 1 else "sweep_J", "need at least one eigenpair per block")
    if cfg.tau <= 0:
        raise ConfigError("tau", "must be positive")
    if cfg.T <= 0:
        raise ConfigError("T", "must be positive")
    k = round(cfg.T / cfg.tau)
    if k < 1 or not math.isclose(k * cfg.tau, cfg.T, rel_tol=1e-12, abs_tol=0.0):
        raise ConfigError("tau", f"tau={cfg.tau:g} does not divide T={cfg.T:g}")
    if cfg.contrast < 1:
        raise ConfigError("contrast", f"must be >= 1, got {cfg.contrast:g}")
    for name in ("M", "nu"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(name, "must be positive")
    if not 0 <= cfg.nu_p < 0.5:
        raise ConfigError("nu_p", "Poisson ratio must lie in [0, 0.5)")
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError("threads", "must be >= 1")
    if cfg.medium not in GENERATORS and not Path(cfg.medium).is_file():
        raise ConfigError("medium", f"not a generator ({', '.join(GENERATORS)}) or a readable file: {cfg.medium}")


def build_medium(cfg: RunConfig, mesh, N):
    """Medium for the run; block-wise alpha follows the coarse grid with ``N`` blocks per side."""
    part = build_coarse_partition(mesh, N)
    if cfg.medium == "channel":
        return generate_channel_medium(mesh, part, cfg.contrast, cfg.seed, nu_p=cfg.nu_p, M=cfg.M, nu=cfg.nu)[0]
    if cfg.medium == "fracture":
        return generate_fracture_medium(mesh, part, cfg.contrast, cfg.seed, nu_p=cfg.nu_p, M=cfg.M, nu=cfg.nu)[0]
    if cfg.medium == "homogeneous":
        return homogeneous_medium(mesh, nu_p=cfg.nu_p, M=cfg.M, nu=cfg.nu)
    return load_medium(cfg.medium, mesh)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run(cfg: RunConfig) -> list[Path]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.echo())
    mesh = build_fine_mesh(cfg.fine_n)
    alpha_N = max(cfg.sweep_N) if cfg.mode == "sweep-H" else cfg.coarse_N
    medium = build_medium(cfg, mesh, alpha_N)
    grid = TimeGrid.from_T(cfg.T, cfg.tau)
    study = Study(mesh, medium, grid, f=cfg.f, threads=cfg.threads, seed=cfg.seed)
    written = []

    if cfg.mode == "reference":
        states = study.reference
        path = out / "reference_final.vtk"
        export_fields(path, mesh, **state_fields(states[-1]))
        epath = out / "reference_energy.csv"
        _write_rows(epath, ["step", "t", "energy"],
                    [[k, repr(float(s.t)), repr(energy(study.ops, s))] for k, s in enumerate(states)])
        written += [path, epath]
    elif cfg.mode == "multiscale":
        ms = study.solve(cfg.coarse_N, cfg.layers, cfg.basis_J)
        rep = compute_errors(study.reference[-1], ms.final, study.ops)
        table = StudyTable()
        table.add(StudyRow(math.sqrt(2.0) / cfg.coarse_N, cfg.coarse_N, cfg.layers, cfg.basis_J, cfg.seed, rep))
        path = out / "errors.csv"
        table.write_csv(path)
        fpath = out / "multiscale_final.vtk"
        export_fields(fpath, mesh, **state_fields(ms.final))
        written += [path, fpath]
    elif cfg.mode == "sweep-H":
        path = out / "sweep_H.csv"
        sweep_H(study, cfg.sweep_N, cfg.basis_J, cfg.layers_m).write_csv(path)
        written.append(path)
    elif cfg.mode == "sweep-m":
        path = out / "sweep_m.csv"
        sweep_m(study, cfg.coarse_N, cfg.sweep_m, cfg.basis_J).write_csv(path)
        written.append(path)
    elif cfg.mode == "sweep-J":
        path = out / "sweep_J.csv"
        sweep_J(study, cfg.coarse_N, cfg.layers, cfg.sweep_J).write_csv(path)
        written.append(path)
    else:
        N = cfg.coarse_N
        part = study.partition(N)
        block = cfg.block if cfg.block is not None else (N // 2) * N + N // 2
        if not 0 <= block < part.n_blocks:
            raise ConfigError("block", f"{block} outside 0..{part.n_blocks - 1}")
        aux = study.auxiliary(N, cfg.basis_J)
        patch = oversample(part, block, cfg.layers)
        for j in range(cfg.basis_J):
            psi = solve_cem_basis(study.ops, aux, patch, block, j, "u").dofs
            phi = solve_cem_basis(study.ops, aux, patch, block, j, "p").dofs
            path = out / f"basis_block{block}_j{j}.vtk"
            export_fields(path, mesh, **basis_fields(psi, phi))
            written.append(path)
        epath = out / "eigenvalues.csv"
        write_eigenvalues_csv(epath, aux)
        written.append(epath)
    return written


def _manifest(cfg, written, wall, argv):
    return {
        "program": "cemporo",
        "version": __version__,
        "argv": list(argv),
        "config": {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)},
        "outputs": {p.name: _digest(p) for p in written},
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
        "wall_time_s": round(wall, 3),
    }


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cemporo", description="Multiscale poroelasticity experiments.")
    p.add_argument("--config", help="file of 'key = value' lines; flags override it")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--fine-n", dest="fine_n", help="fine cells per side")
    p.add_argument("--coarse-N", dest="coarse_N", help="coarse blocks per side")
    p.add_argument("--layers", dest="layers_m", help="oversampling layers, or 'auto'")
    p.add_argument("--basis-J", dest="basis_J", help="eigenpairs per block and family")
    p.add_argument("--tau")
    p.add_argument("--T")
    p.add_argument("--medium", help="channel, fracture, homogeneous, or a medium file")
    p.add_argument("--contrast")
    p.add_argument("--seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", help="worker threads for basis construction (default: all cores)")
    p.add_argument("-q", "--quiet", action="store_true", help="only report errors on stderr")
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "quiet")}
    start = time.perf_counter()
    try:
        cfg = parse_config(args.config, overrides)
        if cfg.threads is None:
            cfg.threads = os.cpu_count() or 1
        log.info("mode %s: n=%d N=%d, output in %s", cfg.mode, cfg.fine_n, cfg.coarse_N, cfg.out)
        written = run(cfg)
        manifest = _manifest(cfg, written, time.perf_counter() - start, argv)
        (Path(cfg.out) / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except KeyboardInterrupt:
        print("cemporo: interrupted", file=sys.stderr)
        return 130
    except (ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"cemporo: error: {exc}", file=sys.stderr)
        return 1
    for p in written:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
