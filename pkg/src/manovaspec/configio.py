"""Config-file ingestion and plain-text matrix I/O.

A run is described by a single JSON file: design (built-in one-way layout
or custom matrices from text files), one noise entry per component, and a
list of signal spikes.  Matrix files are whitespace-separated text, one
row per line, with a "rows cols" header line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import (
    ModelDesign,
    NoiseModel,
    SignalModel,
    build_one_way_layout,
    isotropic_approximation,
    sample_paper_noise,
)

__all__ = ["RunConfig", "load_config", "read_matrix", "write_matrix"]


def read_matrix(path):
    """Dense matrix from text: first line 'rows cols', then one row per line."""
    path = Path(path)
    try:
        with path.open() as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ConfigError(f"{path}: first line must be 'rows cols'")
            rows, cols = int(header[0]), int(header[1])
            data = np.loadtxt(fh, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read matrix file {path}: {exc}") from exc
    if data.shape != (rows, cols):
        raise ConfigError(f"{path}: declared {rows}x{cols}, found {data.shape}")
    return data


def write_matrix(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with Path(path).open("w") as fh:
        fh.write(f"{M.shape[0]} {M.shape[1]}\n")
        for row in M:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved problem description plus run parameters."""

    design: ModelDesign
    noise: NoiseModel
    signal: SignalModel
    target: int
    seed: int
    replicates: int
    xi: str
    delta: float
    raw: dict  # config echo for manifests


def _build_design(cfg, base):
    kind = cfg.get("design", "one_way")
    p = cfg.get("p")
    if p is None:
        raise ConfigError("config must set the trait dimension 'p'")
    if kind == "one_way":
        n_pairs = cfg.get("n_pairs")
        if n_pairs is None:
            raise ConfigError("one_way design needs 'n_pairs'")
        return build_one_way_layout(n_pairs, p, group_size=cfg.get("group_size", 2))
    if kind == "custom":
        u_paths = cfg.get("u_paths")
        b_path = cfg.get("b_path")
        if not u_paths or not b_path:
            raise ConfigError("custom design needs 'u_paths' (list) and 'b_path'")
        U_r = [read_matrix(base / q) for q in u_paths]
        B = read_matrix(base / b_path)
        X = read_matrix(base / cfg["x_path"]) if cfg.get("x_path") else None
        return ModelDesign.create(U_r=U_r, B=B, p=p, X=X, enforce_annihilation=False)
    raise ConfigError(f"unknown design kind {kind!r} (expected one_way|custom)")


def _build_noise(cfg, design, base):
    entries = cfg.get("noise")
    if entries is None:
        raise ConfigError("config must list one 'noise' entry per component")
    if len(entries) != design.k:
        raise ConfigError(f"{len(entries)} noise entries for {design.k} components")
    p = design.p
    mats = []
    for i, ent in enumerate(entries, start=1):
        kind = ent.get("kind")
        if kind == "isotropic":
            mats.append(float(ent["sigma2"]) * np.eye(p))
        elif kind == "diagonal":
            d = read_matrix(base / ent["path"]).reshape(-1)
            if d.size != p:
                raise ConfigError(f"noise {i}: diagonal has {d.size} entries, expected {p}")
            mats.append(np.diag(d))
        elif kind == "dense":
            S = read_matrix(base / ent["path"])
            if S.shape != (p, p):
                raise ConfigError(f"noise {i}: dense covariance is {S.shape}, expected {(p, p)}")
            mats.append(S)
        elif kind == "paper_exponential":
            S = sample_paper_noise(p, ent.get("zeroed", 4), ent.get("seed", i))
            mats.append(float(ent.get("scale", 1.0)) * S)
        else:
            raise ConfigError(f"noise {i}: unknown kind {kind!r}")
    noise = NoiseModel(sigma_ring=tuple(mats))
    if cfg.get("isotropic_approximation", False):
        noise = isotropic_approximation(noise, p)
    return noise


def _build_signal(cfg, design):
    spikes = []
    for i, ent in enumerate(cfg.get("signal", []), start=1):
        r = ent.get("component")
        if r is None:
            raise ConfigError(f"signal {i}: missing 'component'")
        scale = float(ent.get("scale", 1.0))
        if "vector" in ent:
            v = np.asarray(ent["vector"], dtype=float)
        elif "basis" in ent:
            j = int(ent["basis"])
            if not 1 <= j <= design.p:
                raise ConfigError(f"signal {i}: basis index {j} outside 1..{design.p}")
            v = np.zeros(design.p)
            v[j - 1] = 1.0
        else:
            raise ConfigError(f"signal {i}: needs 'vector' or 'basis'")
        spikes.append((int(r), scale * v))
    return SignalModel.from_spikes(design.k, design.p, spikes)


def load_config(path):
    """Parse and resolve a JSON run configuration."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    base = path.parent
    design = _build_design(raw, base)
    noise = _build_noise(raw, design, base)
    signal = _build_signal(raw, design)
    target = int(raw.get("target", 1))
    if not 1 <= target <= design.k:
        raise ConfigError(f"target component {target} outside 1..{design.k}")
    xi = raw.get("xi", "gaussian")
    if xi not in ("gaussian", "rademacher"):
        raise ConfigError(f"unknown xi distribution {xi!r}")
    return RunConfig(
        design=design,
        noise=noise,
        signal=signal,
        target=target,
        seed=int(raw.get("seed", 0)),
        replicates=int(raw.get("replicates", 200)),
        xi=xi,
        delta=float(raw.get("delta", 0.1)),
        raw=raw,
    )
