"""Run artifacts: config files, field/partition dumps, traces, manifests.

Everything on disk is either key=value text or raw little-endian float64 /
uint8 payloads behind a short text header, so artifacts stay greppable and
loadable without this package.  The manifest is rewritten atomically at
every checkpoint; a interrupted sweep resumes from the last completed beta
recorded there.
"""

from __future__ import annotations

import dataclasses
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .energy import PinwheelState, SolverConfig
from .grid import Field, ReducedGrid

FIELD_MAGIC = "pinwheel-field 1"
PARTITION_MAGIC = "pinwheel-partition 1"

_CONFIG_TYPES = {
    "dim": int,
    "ell": int,
    "beta": float,
    "n_r1": int,
    "n_r2": int,
    "n_phi": int,
    "radius": float,
    "tol_gradient": float,
    "tol_nehari": float,
    "tol_equivariance": float,
    "max_iters": int,
    "reproject_every": int,
    "gauge_every": int,
    "r_star": float,
    "gauge_snap_cells": float,
    "concentration_floor_cells": float,
    "poisson_tol": float,
    "armijo_c": float,
    "step_init": float,
    "step_min": float,
    "seed_r1": float,
    "seed_r2": float,
    "seed_phi": float,
    "seed_radius": float,
}


class ConfigError(ValueError):
    """Config file rejected: bad syntax, unknown key, or invalid value."""


def parse_config(path) -> tuple[SolverConfig, tuple]:
    """Read a key=value config file; empty file means full defaults.

    Unknown keys are rejected with their line number; beta_schedule is a
    comma-separated list of nonpositive values.  Returns the config and its
    schedule.
    """
    values = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key == "beta_schedule":
            try:
                values[key] = tuple(float(x) for x in val.split(",") if x.strip())
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad schedule {val!r}") from None
        elif key in _CONFIG_TYPES:
            try:
                values[key] = _CONFIG_TYPES[key](val)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {val!r}") from None
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    try:
        cfg = SolverConfig(**values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cfg, cfg.beta_schedule


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def field_filename(component: int, beta_index: int) -> str:
    return f"field_{component}_{beta_index}.bin"


def dump_field(path, f: Field, component: int, beta_index: int, beta: float, ell: int):
    g = f.grid
    header = "\n".join(
        [
            FIELD_MAGIC,
            f"n_r1={g.n_r1}",
            f"n_r2={g.n_r2}",
            f"n_phi={g.n_phi}",
            f"radius={g.radius:.17g}",
            f"component={component}",
            f"beta_index={beta_index}",
            f"beta={beta:.17g}",
            f"ell={ell}",
            "end_header",
            "",
        ]
    )
    payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    _atomic_write(Path(path), header.encode() + payload)


def _split_header(blob: bytes, magic: str):
    marker = b"end_header\n"
    pos = blob.find(marker)
    if pos < 0:
        raise ValueError("missing end_header marker")
    head = blob[:pos].decode().splitlines()
    if not head or head[0] != magic:
        raise ValueError(f"bad magic line {head[:1]!r}")
    meta = {}
    for line in head[1:]:
        k, _, v = line.partition("=")
        meta[k] = v
    return meta, blob[pos + len(marker):]


def load_field(path) -> tuple[Field, dict]:
    blob = Path(path).read_bytes()
    meta, payload = _split_header(blob, FIELD_MAGIC)
    grid = ReducedGrid(int(meta["n_r1"]), int(meta["n_r2"]), int(meta["n_phi"]), float(meta["radius"]))
    vals = np.frombuffer(payload, dtype="<f8").reshape(grid.shape).copy()
    return Field(grid, vals), meta


def dump_partition(path, labels: np.ndarray, meta: dict):
    n1, n2, n3 = labels.shape
    lines = [PARTITION_MAGIC, f"n_r1={n1}", f"n_r2={n2}", f"n_phi={n3}"]
    lines += [f"{k}={v}" for k, v in meta.items()]
    lines += ["end_header", ""]
    _atomic_write(Path(path), "\n".join(lines).encode() + labels.astype(np.uint8).tobytes())


def load_partition(path) -> tuple[np.ndarray, dict]:
    blob = Path(path).read_bytes()
    meta, payload = _split_header(blob, PARTITION_MAGIC)
    shape = (int(meta["n_r1"]), int(meta["n_r2"]), int(meta["n_phi"]))
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape).copy(), meta


TRACE_COLUMNS = (
    "beta",
    "j_value",
    "kinetic_total",
    "overlap_max",
    "beta_times_overlap",
    "sup_norm",
    "epsilon",
    "iters",
    "converged",
)


def trace_rows(entries) -> list[str]:
    rows = [",".join(TRACE_COLUMNS)]
    for e in entries:
        rows.append(
            ",".join(
                [
                    f"{e.beta:.17g}",
                    f"{e.j_value:.17g}",
                    f"{e.kinetic_total:.17g}",
                    f"{e.overlap_max:.17g}",
                    f"{e.beta_times_overlap:.17g}",
                    f"{e.sup_norm:.17g}",
                    f"{e.epsilon:.17g}",
                    str(e.iters),
                    "1" if e.converged else "0",
                ]
            )
        )
    return rows


def write_trace(path, entries):
    _atomic_write(Path(path), ("\n".join(trace_rows(entries)) + "\n").encode())


def read_trace(path) -> list[dict]:
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        row = dict(zip(header, parts))
        out.append(
            {
                k: (int(v) if k in ("iters", "converged") else float(v))
                for k, v in row.items()
            }
        )
    return out


def write_summary(path, entry, ell: int):
    lines = [
        f"beta={entry.beta:.17g}",
        f"j_value={entry.j_value:.17g}",
        f"kinetic_total={entry.kinetic_total:.17g}",
        f"iters={entry.iters}",
        f"converged={int(entry.converged)}",
        f"epsilon={entry.epsilon:.17g}",
        f"sup_norm={entry.sup_norm:.17g}",
        f"flags={','.join(entry.flags) if entry.flags else '-'}",
    ]
    for i in range(ell):
        row = " ".join(f"{entry.overlap[i, j]:.10g}" for j in range(ell))
        lines.append(f"overlap_{i + 1}={row}")
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode())


@dataclass
class RunManifest:
    """What a run produced so far; safe to rewrite at every checkpoint."""

    config: SolverConfig
    schedule: tuple
    out_dir: str
    completed: list          # [(beta, beta_index)]
    artifacts: list          # relative paths
    verdicts: dict
    version: str = "0.1.0"

    def write(self, path):
        lines = ["pinwheel-manifest 1", f"version={self.version}", f"timestamp={time.time():.3f}"]
        for f in dataclasses.fields(SolverConfig):
            v = getattr(self.config, f.name)
            if f.name == "beta_schedule":
                v = ",".join(f"{b:.17g}" for b in v)
            lines.append(f"config.{f.name}={v}")
        lines.append("schedule=" + ",".join(f"{b:.17g}" for b in self.schedule))
        lines.append(f"out_dir={self.out_dir}")
        for beta, idx in self.completed:
            lines.append(f"completed={idx}:{beta:.17g}")
        for a in self.artifacts:
            lines.append(f"artifact={a}")
        for k, v in self.verdicts.items():
            lines.append(f"verdict.{k}={v}")
        _atomic_write(Path(path), ("\n".join(lines) + "\n").encode())

    @staticmethod
    def read(path):
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != "pinwheel-manifest 1":
            raise ValueError(f"not a manifest: {path}")
        cfg_values = {}
        schedule = ()
        out_dir = ""
        completed = []
        artifacts = []
        verdicts = {}
        for line in lines[1:]:
            k, _, v = line.partition("=")
            if k.startswith("config."):
                name = k[len("config."):]
                if name == "beta_schedule":
                    cfg_values[name] = tuple(float(x) for x in v.split(",") if x)
                elif name in _CONFIG_TYPES:
                    cfg_values[name] = _CONFIG_TYPES[name](v)
            elif k == "schedule":
                schedule = tuple(float(x) for x in v.split(",") if x)
            elif k == "out_dir":
                out_dir = v
            elif k == "completed":
                idx, _, beta = v.partition(":")
                completed.append((float(beta), int(idx)))
            elif k == "artifact":
                artifacts.append(v)
            elif k.startswith("verdict."):
                verdicts[k[len("verdict."):]] = v
        cfg = SolverConfig(**cfg_values)
        return RunManifest(cfg, schedule, out_dir, completed, artifacts, verdicts)


def write_report(path, entries: dict):
    """Fixed-key structured text report; merges into an existing file."""
    path = Path(path)
    existing = {}
    if path.exists():
        for line in path.read_text().splitlines():
            k, _, v = line.partition("=")
            if k:
                existing[k] = v
    existing.update({k: _fmt(v) for k, v in entries.items()})
    body = "\n".join(f"{k}={v}" for k, v in existing.items()) + "\n"
    _atomic_write(path, body.encode())


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def read_report(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        k, _, v = line.partition("=")
        if k:
            out[k] = v
    return out


def dump_state(out_dir, state: PinwheelState, beta_index: int):
    paths = []
    for i in range(state.ell):
        name = field_filename(i + 1, beta_index)
        dump_field(Path(out_dir) / name, state.component(i), i + 1, beta_index, state.beta, state.ell)
        paths.append(name)
    return paths


def load_state(out_dir, ell: int, beta_index: int) -> PinwheelState:
    comps = []
    beta = 0.0
    for i in range(ell):
        f, meta = load_field(Path(out_dir) / field_filename(i + 1, beta_index))
        comps.append(f.values)
        beta = float(meta["beta"])
    grid = f.grid
    return PinwheelState(grid, np.stack(comps), beta)
