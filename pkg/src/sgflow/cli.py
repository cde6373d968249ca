"""Command-line driver: initial conditions, runs, diagnostics, sweeps.

Subcommands: ``ic`` writes a seed file, ``run`` integrates a trajectory
with snapshots/energy logs and checkpointed resume, ``diag`` extracts
fields and error metrics from a finished trajectory, ``convergence`` runs
a timestep or particle-count sweep and fits the error slope.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sgio
from .io import _fmt as _f
from .config import DAY_SECONDS, ConfigError, RunConfig
from .diagnostics import (
    DiagnosticsError,
    energy_error_series,
    extract_fields,
    extract_fields_2d,
    rmsv,
    sinkhorn_w2,
    w2_exact,
)
from .dynamics import (
    SimState,
    TransportRhs,
    integrate,
    total_energy_2d,
    total_energy_3d,
    velocities_from_offsets,
)
from .geometry import DiagramBuilder, GeometryError, SeedCloud, WeightVector, embed_seeds_2d
from .initcond import generate_seeds
from .otsolver import SolverError, solve_ot

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

log = logging.getLogger("sgflow")


class TransportRhs2D(TransportRhs):
    """RHS for the 2D benchmark on the embedded slab."""

    def velocities(self, seeds: SeedCloud, diagram):
        off = diagram.centroid_offsets()
        z = seeds.positions
        vel = np.zeros_like(z)
        vel[:, 0] = -(z[:, 1] + off[:, 1])   # -c2
        vel[:, 1] = off[:, 0]                # c1 - z1
        return vel


def _seed_metadata(cfg: RunConfig) -> dict:
    return {
        "kind": cfg.ic_kind,
        "shear": cfg.shear,
        "a": cfg.a, "b": cfg.b, "c": cfg.c,
        "amp_bottom": cfg.amp_bottom, "amp_top": cfg.amp_top,
        "top_shift": cfg.top_shift,
        "modes": cfg.modes, "quad": cfg.quad,
        "grid": "x".join(str(g) for g in cfg.grid),
        "version": __version__,
    }


def _initial_seeds(cfg: RunConfig) -> SeedCloud:
    """Embedded 3D seed cloud from the configured source."""
    if cfg.ic_kind == "cyclone":
        return generate_seeds(cfg.cyclone_params())
    pos, _meta = sgio.read_seed_file(cfg.seed_file)
    if cfg.dim == 2:
        if pos.shape[1] != 2:
            raise ConfigError("2D run needs a 2-column seed file")
        return embed_seeds_2d(pos)
    if pos.shape[1] != 3:
        raise ConfigError("3D run needs a 3-column seed file")
    return SeedCloud(pos)


def _run_domain(cfg: RunConfig):
    return cfg.domain2().embed() if cfg.dim == 2 else cfg.domain()


def _file_positions(cfg: RunConfig, positions: np.ndarray) -> np.ndarray:
    return positions[:, :2] if cfg.dim == 2 else positions


def _state_energy(cfg: RunConfig, state: SimState, diagram) -> float:
    if cfg.dim == 2:
        areas = diagram.volumes
        m2_2d = diagram.second_moments - areas / 12.0
        return total_energy_2d(areas, m2_2d, state.seeds.positions[:, :2])
    return total_energy_3d(diagram, state.seeds)


def cmd_ic(cfg: RunConfig, out_file: str | None = None) -> int:
    if cfg.ic_kind != "cyclone":
        raise ConfigError("ic generates the cyclone initial condition; "
                          "ic.kind must be cyclone")
    seeds = generate_seeds(cfg.cyclone_params())
    path = Path(out_file) if out_file else cfg.resolve_out_dir() / "seeds.csv"
    sgio.write_seed_file(path, seeds.positions, _seed_metadata(cfg))
    log.info("wrote %d seeds to %s", seeds.n, path)
    return EXIT_OK


def cmd_run(cfg: RunConfig, resume: bool = False,
            max_steps: int | None = None) -> int:
    out = cfg.resolve_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    config_copy = out / "config.txt"
    text = cfg.to_text()
    if config_copy.exists() and resume:
        if config_copy.read_text(encoding="utf-8") != text:
            raise ConfigError("resume with a different configuration")
    else:
        config_copy.write_text(text, encoding="utf-8")

    domain = _run_domain(cfg)
    integ = cfg.integrator_settings()
    n_steps = integ.n_steps
    rhs_cls = TransportRhs2D if cfg.dim == 2 else TransportRhs
    rhs = rhs_cls(domain, cfg.solver_settings())

    energy_log = sgio.StepLog(out / "energy.csv", "step,t_seconds,energy")
    solves_log = sgio.StepLog(out / "solves.csv",
                              "step,t_seconds,solves,newton_iterations")

    if resume and (out / "checkpoint.bin").exists():
        state = sgio.read_checkpoint(out)
        energy_log.truncate_to(state.step_index)
        solves_log.truncate_to(state.step_index)
        log.info("resuming at step %d (t = %g s)", state.step_index, state.t)
    else:
        seeds = _initial_seeds(cfg)
        state = SimState(t=0.0, seeds=seeds,
                         warm_weights=WeightVector.zeros(seeds.n))
        sgio.write_snapshot(out, 0, 0.0, _file_positions(cfg, seeds.positions),
                            state.warm_weights.w)
        sgio.write_checkpoint(out, state)

    def on_step(old: SimState, new: SimState, diag0):
        energy_log.append(old.step_index, old.t, _state_energy(cfg, old, diag0))
        solves_log.append(old.step_index, old.t, rhs.solve_count,
                          rhs.newton_iterations)
        rhs.solve_count = 0
        rhs.newton_iterations = 0
        if new.step_index % cfg.snapshot_stride == 0 or new.step_index == n_steps:
            sgio.write_snapshot(out, new.step_index, new.t,
                                _file_positions(cfg, new.seeds.positions),
                                new.warm_weights.w)
            sgio.write_checkpoint(out, new)

    try:
        state = integrate(state, n_steps, integ.method, integ.h, rhs,
                          integ.time_scale, on_step=on_step, max_steps=max_steps)
    except Exception:
        sgio.write_checkpoint(out, state)
        raise

    if state.step_index == n_steps:
        # one extra warm solve records the final state's energy
        _vel, _w, diag = rhs(state.seeds, state.warm_weights)
        energy_log.append(state.step_index, state.t,
                          _state_energy(cfg, state, diag))
        if state.step_index % cfg.snapshot_stride != 0:
            sgio.write_snapshot(out, state.step_index, state.t,
                                _file_positions(cfg, state.seeds.positions),
                                state.warm_weights.w)
            sgio.write_checkpoint(out, state)
        log.info("run complete: %d steps", n_steps)
    else:
        sgio.write_checkpoint(out, state)
        log.info("stopped at step %d of %d", state.step_index, n_steps)
    return EXIT_OK


def _snapshot_state(cfg: RunConfig, path: Path):
    pos, w = sgio.read_snapshot_csv(path)
    if cfg.dim == 2:
        return embed_seeds_2d(pos), WeightVector(w), pos
    return SeedCloud(pos), WeightVector(w), pos


def cmd_diag(cfg: RunConfig, trajectory: str, reference: str | None = None,
             use_sinkhorn: bool = False, out_dir: str | None = None) -> int:
    traj = Path(trajectory)
    if not traj.exists():
        raise ConfigError(f"trajectory directory does not exist: {traj}")
    out = Path(out_dir) if out_dir else traj / "diag"
    out.mkdir(parents=True, exist_ok=True)

    energy_rows = sgio.read_log(traj / "energy.csv")
    errors, max_err = energy_error_series(energy_rows[:, 2])
    with open(out / "energy_error.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,t_seconds,relative_error\n")
        for row, err in zip(energy_rows, errors):
            fh.write(f"{int(row[0])},{_f(row[1])},{_f(err)}\n")
    (out / "metrics.txt").write_text(
        f"max_conservation_error = {_f(max_err)}\n", encoding="utf-8")

    snaps = sgio.list_snapshots(traj)
    if not snaps:
        raise ConfigError(f"no snapshots in {traj}")
    domain = _run_domain(cfg)
    settings = cfg.solver_settings()
    rmsv_rows = []
    for step_idx, path in snaps:
        seeds, warm, raw_pos = _snapshot_state(cfg, path)
        _w, diagram, _rep = solve_ot(seeds, domain, warm_start=warm,
                                     settings=settings)
        t = step_idx * cfg.h_seconds
        if cfg.dim == 2:
            cen2 = raw_pos + diagram.centroid_offsets()[:, :2]
            v, theta = extract_fields_2d(raw_pos, cen2, cfg.field_c1, cfg.field_c2)
            with open(out / f"fields_{step_idx:06d}.csv", "w",
                      encoding="utf-8", newline="\n") as fh:
                fh.write("i,cx,cy,volume,v,temperature\n")
                for i in range(len(v)):
                    fh.write(f"{i},{_f(cen2[i,0])},{_f(cen2[i,1])},"
                             f"{_f(diagram.volumes[i])},{_f(v[i])},"
                             f"{_f(theta[i])}\n")
            rmsv_rows.append((t, rmsv(v, diagram), 0.0, rmsv(v, diagram)))
        else:
            fields = extract_fields(seeds, diagram)
            cen = diagram.centroids
            with open(out / f"fields_{step_idx:06d}.csv", "w",
                      encoding="utf-8", newline="\n") as fh:
                fh.write("i,cx,cy,cz,volume,zvel,mvel,tvel,temperature\n")
                for i in range(len(fields.zvel)):
                    fh.write(f"{i},{_f(cen[i,0])},{_f(cen[i,1])},{_f(cen[i,2])},"
                             f"{_f(fields.volume[i])},{_f(fields.zvel[i])},"
                             f"{_f(fields.mvel[i])},{_f(fields.tvel[i])},"
                             f"{_f(fields.temperature[i])}\n")
            rmsv_rows.append((t, rmsv(fields.mvel, diagram),
                              rmsv(fields.zvel, diagram),
                              rmsv(fields.tvel, diagram)))
    with open(out / "rmsv.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,mrmsv,zrmsv,trmsv\n")
        for t, m, z, tt in rmsv_rows:
            fh.write(f"{_f(t)},{_f(m)},{_f(z)},{_f(tt)}\n")

    if reference is not None:
        ref = Path(reference)
        if not ref.exists():
            raise ConfigError(f"reference directory does not exist: {ref}")
        _write_w2_table(cfg, traj, ref, out, use_sinkhorn)
    return EXIT_OK


def _nearest_snapshot(snaps, t_target: float, h: float):
    best = None
    best_dt = None
    for step_idx, path in snaps:
        dt = abs(step_idx * h - t_target)
        if best_dt is None or dt < best_dt:
            best, best_dt = (step_idx, path), dt
    steps = [s for s, _ in snaps]
    gap = min(np.diff(sorted(steps))) * h if len(steps) > 1 else h
    if best is None or best_dt > 0.5 * gap + 1e-9:
        raise ConfigError(f"no snapshot near t = {t_target} s")
    return best


def _write_w2_table(cfg, traj, ref, out, use_sinkhorn):
    snaps_a = sgio.list_snapshots(traj)
    snaps_b = sgio.list_snapshots(ref)
    marks = cfg.resolved_day_marks()
    values = []
    for mark in marks:
        t_target = mark * DAY_SECONDS
        _, pa = _nearest_snapshot(snaps_a, t_target, cfg.h_seconds)
        _, pb = _nearest_snapshot(snaps_b, t_target, cfg.h_seconds)
        pos_a, _ = sgio.read_snapshot_csv(pa)
        pos_b, _ = sgio.read_snapshot_csv(pb)
        if len(pos_a) != len(pos_b) and not use_sinkhorn:
            raise ConfigError(
                "particle counts differ; pass --sinkhorn to compare them")
        if use_sinkhorn:
            values.append(sinkhorn_w2(pos_a, pos_b))
        else:
            values.append(w2_exact(pos_a, pos_b))
    with open(out / "w2.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(f"day_{m:g}" for m in marks) + "\n")
        fh.write(",".join(_f(v) for v in values) + "\n")


def _rotate_exact(positions: np.ndarray, angle: float) -> np.ndarray:
    out = positions.copy()
    ca, sa = np.cos(angle), np.sin(angle)
    out[:, 0] = ca * positions[:, 0] - sa * positions[:, 1]
    out[:, 1] = sa * positions[:, 0] + ca * positions[:, 1]
    return out


def cmd_convergence(cfg: RunConfig) -> int:
    raw = getattr(cfg, "extra", {})
    mode = raw.get("convergence.mode")
    if mode not in ("h", "n"):
        raise ConfigError("convergence.mode must be h or n")
    try:
        values = [float(tok) for tok in
                  raw.get("convergence.values", "").replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError("convergence.values must be numbers") from exc
    if len(values) < 3:
        raise ConfigError("sweep too short to fit (< 3 points)")
    mark_hours = float(raw.get("convergence.mark_hours", "12"))
    t_mark = mark_hours * 3600.0
    rhs_kind = raw.get("convergence.rhs", "transport")
    out = cfg.resolve_out_dir()
    out.mkdir(parents=True, exist_ok=True)

    if mode == "h":
        errors = _h_sweep(cfg, values, t_mark, rhs_kind,
                          raw.get("convergence.reference"))
        fit_x = [v for v in values]
    else:
        errors = _n_sweep(cfg, values, t_mark)
        fit_x = [v for v in values[:-1]]
        values = values[:-1]

    good = [(x, e) for x, e in zip(fit_x, errors) if e > 0.0]
    if len(good) < 2:
        raise ConfigError("not enough nonzero errors to fit a slope")
    lx = np.log([g[0] for g in good])
    le = np.log([g[1] for g in good])
    slope = float(np.polyfit(lx, le, 1)[0])

    with open(out / "convergence.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("value,error\n")
        for x, e in zip(fit_x, errors):
            fh.write(f"{_f(x)},{_f(e)}\n")
    (out / "convergence.txt").write_text(
        f"mode = {mode}\nslope = {_f(slope)}\n", encoding="utf-8")
    print(f"fitted log-log slope: {slope:.4f}")
    return EXIT_OK


def _transport_positions_at(cfg: RunConfig, seeds: SeedCloud, h: float,
                            t_mark: float) -> np.ndarray:
    n = t_mark / h
    if abs(n - round(n)) > 1e-9:
        raise ConfigError(f"mark {t_mark} s is not a multiple of h = {h} s")
    rhs = TransportRhs(_run_domain(cfg), cfg.solver_settings())
    state = SimState(t=0.0, seeds=seeds, warm_weights=WeightVector.zeros(seeds.n))
    state = integrate(state, int(round(n)), cfg.method, h, rhs,
                      cfg.time_scale_seconds)
    return state.seeds.positions


def _h_sweep(cfg, values, t_mark, rhs_kind, reference_raw):
    seeds = _initial_seeds(cfg)
    if rhs_kind == "rotation":
        def run(h):
            n = int(round(t_mark / h))
            dt = h / cfg.time_scale_seconds
            rhs = lambda sc, w: (velocities_from_offsets(-sc.positions), w, None)
            state = SimState(t=0.0, seeds=seeds,
                             warm_weights=WeightVector.zeros(seeds.n))
            state = integrate(state, n, cfg.method, h, rhs, cfg.time_scale_seconds)
            return state.seeds.positions
        exact = _rotate_exact(seeds.positions, t_mark / cfg.time_scale_seconds)
        return [float(np.sqrt(w2_exact(run(h), exact))) for h in values]

    if reference_raw is not None:
        h_ref = float(reference_raw)
    else:
        h_ref = min(values)
    ref_pos = _transport_positions_at(cfg, seeds, h_ref, t_mark)
    errors = []
    for h in values:
        if h == h_ref:
            errors.append(0.0)
            continue
        pos = _transport_positions_at(cfg, seeds, h, t_mark)
        errors.append(float(np.sqrt(w2_exact(pos, ref_pos))))
    return errors


def _n_sweep(cfg, values, t_mark):
    values.sort()
    clouds = []
    for nval in values:
        side = round(nval ** (1.0 / 3.0))
        if side ** 3 != int(nval):
            raise ConfigError(f"particle count {nval:g} is not a perfect cube")
        params = cfg.cyclone_params()
        params.grid = (side, side, side)
        seeds = generate_seeds(params)
        clouds.append(_transport_positions_at(cfg, seeds, cfg.h_seconds, t_mark))
    ref = clouds[-1]
    return [sinkhorn_w2(c, ref) for c in clouds[:-1]]


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sgflow",
        description="semi-geostrophic flow via semi-discrete optimal transport")
    p.add_argument("--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    p_ic = sub.add_parser("ic", help="generate the cyclone initial condition")
    p_ic.add_argument("--config", required=True)
    p_ic.add_argument("--out", help="seed file path (default <output.dir>/seeds.csv)")

    p_run = sub.add_parser("run", help="integrate a trajectory")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--resume", action="store_true",
                       help="continue from the run directory's checkpoint")
    p_run.add_argument("--max-steps", type=int, default=None,
                       help="stop (checkpointed) after this many steps")

    p_diag = sub.add_parser("diag", help="fields and error metrics")
    p_diag.add_argument("--config", required=True)
    p_diag.add_argument("--trajectory", required=True)
    p_diag.add_argument("--reference", default=None)
    p_diag.add_argument("--sinkhorn", action="store_true",
                        help="entropic divergence (required for mismatched N)")
    p_diag.add_argument("--out", default=None)

    p_conv = sub.add_parser("convergence", help="timestep / particle sweeps")
    p_conv.add_argument("--config", required=True)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_file(args.config)
        if args.command == "ic":
            return cmd_ic(cfg, out_file=args.out)
        if args.command == "run":
            return cmd_run(cfg, resume=args.resume, max_steps=args.max_steps)
        if args.command == "diag":
            return cmd_diag(cfg, args.trajectory, reference=args.reference,
                            use_sinkhorn=args.sinkhorn, out_dir=args.out)
        if args.command == "convergence":
            return cmd_convergence(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (SolverError, GeometryError) as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except DiagnosticsError as exc:
        log.error("diagnostics failure: %s", exc)
        return EXIT_SOLVER
    except OSError as exc:
        log.error("i/o failure: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
