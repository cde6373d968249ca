"""Trajectory persistence: seed files, snapshots, checkpoints, logs.

CSV is the authoritative format (floats written with ``repr`` so values
round-trip exactly); every snapshot also gets a binary mirror for fast
resume: a 16-byte magic header ``SGTRAJ01`` (zero padded), then N (int64)
and t (float64), then the row-major little-endian float64 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dynamics import SimState
from .geometry import SeedCloud, WeightVector

SNAP_MAGIC = b"SGTRAJ01" + b"\x00" * 8
CHKP_MAGIC = b"SGCHKP01"


class IoError(Exception):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


# -- seed files ------------------------------------------------------------

def write_seed_file(path, positions: np.ndarray, metadata: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = positions.shape[1]
    cols = ",".join(f"z{k+1}" for k in range(dim))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(metadata):
            fh.write(f"# {key} = {metadata[key]}\n")
        fh.write(f"i,{cols}\n")
        for i, row in enumerate(positions):
            fh.write(f"{i}," + ",".join(_fmt(v) for v in row) + "\n")


def read_seed_file(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta: dict[str, str] = {}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            if line.startswith("i,"):
                continue
            rows.append([float(tok) for tok in line.split(",")[1:]])
    if not rows:
        raise IoError(f"no seeds found in {path}")
    return np.array(rows, dtype=np.float64), meta


# -- snapshots ---------------------------------------------------------------

def snapshot_name(step: int) -> str:
    return f"snap_{step:06d}"


def write_snapshot(directory, step: int, t: float, positions: np.ndarray,
                   weights: np.ndarray):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    base = directory / snapshot_name(step)
    dim = positions.shape[1]
    cols = ",".join(f"z{k+1}" for k in range(dim))
    with open(base.with_suffix(".csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"i,{cols},w\n")
        for i in range(len(positions)):
            fh.write(f"{i}," + ",".join(_fmt(v) for v in positions[i])
                     + f",{_fmt(weights[i])}\n")
    payload = np.column_stack([positions, weights]).astype("<f8")
    with open(base.with_suffix(".bin"), "wb") as fh:
        fh.write(SNAP_MAGIC)
        fh.write(struct.pack("<q", len(positions)))
        fh.write(struct.pack("<d", float(t)))
        fh.write(payload.tobytes(order="C"))


def read_snapshot_bin(path) -> tuple[float, np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:16] != SNAP_MAGIC:
        raise IoError(f"{path}: bad snapshot magic")
    n = struct.unpack("<q", raw[16:24])[0]
    t = struct.unpack("<d", raw[24:32])[0]
    data = np.frombuffer(raw[32:], dtype="<f8").reshape(n, -1)
    return t, np.array(data[:, :-1]), np.array(data[:, -1])


def read_snapshot_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("i,"):
            raise IoError(f"{path}: bad snapshot header")
        for line in fh:
            if line.strip():
                rows.append([float(tok) for tok in line.split(",")[1:]])
    data = np.array(rows, dtype=np.float64)
    return data[:, :-1], data[:, -1]


def list_snapshots(directory) -> list[tuple[int, Path]]:
    directory = Path(directory)
    out = []
    for p in sorted(directory.glob("snap_*.csv")):
        try:
            out.append((int(p.stem.split("_")[1]), p))
        except (IndexError, ValueError):
            continue
    return out


# -- checkpoints -------------------------------------------------------------

def write_checkpoint(directory, state: SimState):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pos = state.seeds.positions
    n, dim = pos.shape
    has_prev = state.prev_rhs is not None
    blob = bytearray()
    blob += CHKP_MAGIC
    blob += struct.pack("<qqdqq", 1, state.step_index, state.t, n,
                        (dim << 1) | int(has_prev))
    blob += pos.astype("<f8").tobytes(order="C")
    blob += state.warm_weights.w.astype("<f8").tobytes(order="C")
    if has_prev:
        blob += state.prev_rhs.astype("<f8").tobytes(order="C")
    tmp = directory / "checkpoint.bin.tmp"
    tmp.write_bytes(bytes(blob))
    tmp.replace(directory / "checkpoint.bin")


def read_checkpoint(directory) -> SimState:
    path = Path(directory) / "checkpoint.bin"
    raw = path.read_bytes()
    if raw[:8] != CHKP_MAGIC:
        raise IoError(f"{path}: bad checkpoint magic")
    version, step, t, n, packed = struct.unpack("<qqdqq", raw[8:48])
    if version != 1:
        raise IoError(f"{path}: unsupported checkpoint version {version}")
    dim = packed >> 1
    has_prev = bool(packed & 1)
    if dim != 3:
        raise IoError(f"{path}: checkpoints always hold the embedded 3D state")
    off = 48
    pos = np.frombuffer(raw, dtype="<f8", count=n * dim, offset=off).reshape(n, dim)
    off += 8 * n * dim
    w = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
    off += 8 * n
    prev = None
    if has_prev:
        prev = np.array(np.frombuffer(raw, dtype="<f8", count=n * dim,
                                      offset=off).reshape(n, dim))
    return SimState(t=t, seeds=SeedCloud(np.array(pos)),
                    warm_weights=WeightVector(np.array(w)),
                    step_index=int(step), prev_rhs=prev)


# -- per-step logs -----------------------------------------------------------

class StepLog:
    """Append-only CSV keyed by step, truncatable for resume."""

    def __init__(self, path, header: str):
        self.path = Path(path)
        self.header = header
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(header + "\n", encoding="utf-8")

    def truncate_to(self, max_step_exclusive: int):
        """Drop rows with step >= the bound (crash-recovery on resume)."""
        lines = self.path.read_text(encoding="utf-8").splitlines()
        kept = [lines[0] if lines else self.header]
        for line in lines[1:]:
            try:
                step = int(line.split(",", 1)[0])
            except ValueError:
                continue
            if step < max_step_exclusive:
                kept.append(line)
        self.path.write_text("\n".join(kept) + "\n", encoding="utf-8")

    def append(self, step: int, *values):
        with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
            toks = [str(step)]
            for v in values:
                toks.append(_fmt(v) if isinstance(v, float) else str(v))
            fh.write(",".join(toks) + "\n")


def read_log(path) -> np.ndarray:
    """Numeric rows of a step log (header skipped)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    rows = [[float(tok) for tok in line.split(",")]
            for line in lines[1:] if line.strip()]
    return np.array(rows, dtype=np.float64)
