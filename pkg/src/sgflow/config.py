"""Run configuration: flat dotted-key text files.

One `key = value` pair per line, `#` starts a comment, keys are dotted
paths (``solver.eta``), values are plain tokens or whitespace-separated
lists.  The format is deliberately diff-friendly so a run's provenance is
a readable text blob.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import DEFAULT_TIME_SCALE, METHODS, IntegratorSettings
from .geometry import Domain, Domain2D
from .initcond import CycloneParams
from .otsolver import SolverSettings

TABLE_DAY_MARKS = (2.0, 4.0, 9.0, 13.0, 17.0, 21.0, 25.0)
DAY_SECONDS = 86400.0


class ConfigError(Exception):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def _parse_bool(token: str, key: str) -> bool:
    t = token.lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"{key}: expected boolean, got {token!r}")


class KeyValueView:
    """Typed access over the raw key/value dict with error reporting."""

    def __init__(self, raw: dict[str, str]):
        self.raw = dict(raw)
        self.used: set[str] = set()

    def _get(self, key, default, required):
        if key in self.raw:
            self.used.add(key)
            return self.raw[key]
        if required:
            raise ConfigError(f"missing required key {key!r}")
        return default

    def str(self, key, default=None, required=False):
        v = self._get(key, default, required)
        return v if v is None else str(v)

    def float(self, key, default=None, required=False):
        v = self._get(key, default, required)
        if v is None or isinstance(v, float):
            return v
        try:
            return float(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected number, got {v!r}") from exc

    def int(self, key, default=None, required=False):
        v = self._get(key, default, required)
        if v is None or isinstance(v, int):
            return v
        try:
            return int(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected integer, got {v!r}") from exc

    def bool(self, key, default=None, required=False):
        v = self._get(key, default, required)
        if v is None or isinstance(v, bool):
            return v
        return _parse_bool(v, key)

    def floats(self, key, default=None, required=False):
        v = self._get(key, default, required)
        if v is None or not isinstance(v, str):
            return v
        try:
            return tuple(float(tok) for tok in v.replace(",", " ").split())
        except ValueError as exc:
            raise ConfigError(f"{key}: expected list of numbers, got {v!r}") from exc

    def ints(self, key, default=None, required=False):
        v = self.floats(key, default, required)
        if v is None or not isinstance(v, tuple):
            return v
        out = tuple(int(round(x)) for x in v)
        if any(abs(o - x) > 1e-9 for o, x in zip(out, v)):
            raise ConfigError(f"{key}: expected integers")
        return out


@dataclass
class RunConfig:
    """Everything one experiment needs, resolved and validated."""

    # domain
    a: float = 3.66
    b: float = 1.75
    c: float = 0.45
    periodic_x1: bool = True
    periodic_x2: bool = False
    # initial condition
    dim: int = 3
    ic_kind: str = "cyclone"           # cyclone | file
    seed_file: str | None = None
    shear: float = 0.0
    amp_bottom: float = 0.15
    amp_top: float = -0.6
    top_shift: float = 1.0
    modes: int = 32
    quad: int = 512
    grid: tuple[int, int, int] = (16, 16, 16)
    # solver
    eta: float = 1e-3
    max_iterations: int = 50
    linear_solver_tolerance: float = 1e-10
    # integrator
    method: str = "RK4"
    h_seconds: float = 1800.0
    horizon_days: float = 10.0
    time_scale_seconds: float = DEFAULT_TIME_SCALE
    # output
    out_dir: str = "runs/out"
    snapshot_stride: int = 10
    # diagnostics
    day_marks: tuple[float, ...] | None = None
    field_c1: float = 1.0
    field_c2: float = 1.0
    # misc
    rng_seed: int = 0

    @classmethod
    def from_text(cls, text: str, base_dir: Path | None = None) -> "RunConfig":
        kv = KeyValueView(parse_config_text(text))
        cfg = cls(
            a=kv.float("domain.a", 3.66),
            b=kv.float("domain.b", 1.75),
            c=kv.float("domain.c", 0.45),
            periodic_x1=kv.bool("domain.periodic_x1", True),
            periodic_x2=kv.bool("domain.periodic_x2", False),
            dim=kv.int("run.dim", 3),
            ic_kind=kv.str("ic.kind", "cyclone"),
            seed_file=kv.str("ic.seed_file", None),
            shear=kv.float("ic.shear", 0.0),
            amp_bottom=kv.float("ic.amp_bottom", 0.15),
            amp_top=kv.float("ic.amp_top", -0.6),
            top_shift=kv.float("ic.top_shift", 1.0),
            modes=kv.int("ic.modes", 32),
            quad=kv.int("ic.quad", 512),
            grid=kv.ints("ic.grid", (16, 16, 16)),
            eta=kv.float("solver.eta", 1e-3),
            max_iterations=kv.int("solver.max_iterations", 50),
            linear_solver_tolerance=kv.float("solver.linear_tolerance", 1e-10),
            method=kv.str("integrator.method", "RK4"),
            h_seconds=kv.float("integrator.h_seconds", 1800.0),
            horizon_days=kv.float("integrator.horizon_days", 10.0),
            time_scale_seconds=kv.float("integrator.time_scale_seconds",
                                        DEFAULT_TIME_SCALE),
            out_dir=kv.str("output.dir", "runs/out"),
            snapshot_stride=kv.int("output.snapshot_stride", 10),
            day_marks=kv.floats("diag.day_marks", None),
            field_c1=kv.float("diag.c1", 1.0),
            field_c2=kv.float("diag.c2", 1.0),
            rng_seed=kv.int("rng.seed", 0),
        )
        unknown = set(kv.raw) - kv.used - {
            k for k in kv.raw if k.startswith("convergence.")}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.extra = kv.raw
        cfg.validate(base_dir=base_dir)
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, base_dir=path.parent)

    def validate(self, base_dir: Path | None = None):
        if self.ic_kind not in ("cyclone", "file"):
            raise ConfigError("ic.kind must be cyclone or file")
        if self.dim not in (2, 3):
            raise ConfigError("run.dim must be 2 or 3")
        if self.dim == 2 and self.ic_kind != "file":
            raise ConfigError("2D runs take their seeds from a file")
        if self.method not in METHODS:
            raise ConfigError(f"integrator.method must be one of {METHODS}")
        if self.h_seconds <= 0.0:
            raise ConfigError("integrator.h_seconds must be positive")
        if not (0.0 < self.eta < 1.0):
            raise ConfigError("solver.eta must lie in (0, 1)")
        horizon = self.horizon_days * DAY_SECONDS
        n = horizon / self.h_seconds
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError(
                f"horizon of {self.horizon_days} days is not an integer "
                f"number of {self.h_seconds}-second steps")
        if self.ic_kind == "file":
            if not self.seed_file:
                raise ConfigError("ic.kind = file requires ic.seed_file")
            p = Path(self.seed_file)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
                self.seed_file = str(p)
            if not p.exists():
                raise ConfigError(f"seed file does not exist: {p}")
        if self.snapshot_stride < 1:
            raise ConfigError("output.snapshot_stride must be >= 1")

    # derived objects -----------------------------------------------------

    def domain(self) -> Domain:
        return Domain(
            lo=np.array([-self.a, -self.b, 0.0]),
            hi=np.array([self.a, self.b, self.c]),
            periodic=(self.periodic_x1, self.periodic_x2, False),
        )

    def domain2(self) -> Domain2D:
        return Domain2D(lo=np.array([-self.a, -self.b]),
                        hi=np.array([self.a, self.b]),
                        periodic_x=self.periodic_x1)

    def cyclone_params(self) -> CycloneParams:
        return CycloneParams(
            shear=self.shear, a=self.a, b=self.b, c=self.c,
            amp_bottom=self.amp_bottom, amp_top=self.amp_top,
            top_shift=self.top_shift, modes=self.modes,
            grid=tuple(self.grid), quad=self.quad)

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(eta=self.eta, max_iterations=self.max_iterations,
                              linear_solver_tolerance=self.linear_solver_tolerance)

    def integrator_settings(self) -> IntegratorSettings:
        return IntegratorSettings(
            method=self.method, h=self.h_seconds,
            horizon=self.horizon_days * DAY_SECONDS,
            time_scale=self.time_scale_seconds)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_days * DAY_SECONDS / self.h_seconds))

    def resolved_day_marks(self) -> tuple[float, ...]:
        """Explicit marks, or the reference table scaled to the horizon."""
        if self.day_marks is not None:
            return tuple(self.day_marks)
        scale = self.horizon_days / TABLE_DAY_MARKS[-1]
        return tuple(d * scale for d in TABLE_DAY_MARKS)

    def resolve_out_dir(self) -> Path:
        root = os.environ.get("SGFLOW_OUTPUT_ROOT")
        out = Path(self.out_dir)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def to_text(self) -> str:
        """Round-trippable dotted-key dump of the resolved configuration."""
        rows = [
            ("domain.a", self.a), ("domain.b", self.b), ("domain.c", self.c),
            ("domain.periodic_x1", self.periodic_x1),
            ("domain.periodic_x2", self.periodic_x2),
            ("run.dim", self.dim),
            ("ic.kind", self.ic_kind),
            ("ic.seed_file", self.seed_file),
            ("ic.shear", self.shear),
            ("ic.amp_bottom", self.amp_bottom), ("ic.amp_top", self.amp_top),
            ("ic.top_shift", self.top_shift),
            ("ic.modes", self.modes), ("ic.quad", self.quad),
            ("ic.grid", " ".join(str(g) for g in self.grid)),
            ("solver.eta", self.eta),
            ("solver.max_iterations", self.max_iterations),
            ("solver.linear_tolerance", self.linear_solver_tolerance),
            ("integrator.method", self.method),
            ("integrator.h_seconds", self.h_seconds),
            ("integrator.horizon_days", self.horizon_days),
            ("integrator.time_scale_seconds", self.time_scale_seconds),
            ("output.dir", self.out_dir),
            ("output.snapshot_stride", self.snapshot_stride),
            ("rng.seed", self.rng_seed),
        ]
        lines = [f"{k} = {v}" for k, v in rows if v is not None]
        return "\n".join(lines) + "\n"
