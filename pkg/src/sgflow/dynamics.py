"""Particle dynamics: transport-coupled ODE, integrators, energies.

Geostrophic particles move by ``dz/dt = J (z - C(z))`` where ``C`` maps each
seed to the centroid of its Laguerre cell in the fluid domain and ``J``
rotates in the horizontal plane.  The third row of ``J`` vanishes, so every
explicit integrator conserves the vertical coordinate of each particle
exactly (velocities always carry a bitwise-zero third component).

Time is kept in seconds at this interface and converted to the
dimensionless ODE clock by ``time_scale``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    DiagramBuilder,
    Domain,
    Domain2D,
    LaguerreDiagram,
    SeedCloud,
    WeightVector,
    build_diagram_2d,
)
from .otsolver import SolverError, SolverSettings, solve_ot

# Dimensionless-time unit in seconds (inverse mid-latitude Coriolis
# parameter, f ~ 1e-4 1/s); a 30-minute step is then dt = 0.18.
DEFAULT_TIME_SCALE = 1.0e4

METHODS = ("RK4", "Heun", "AB2")

# optimal transport solves needed per step
SOLVES_PER_STEP = {"RK4": 4, "Heun": 2, "AB2": 1}


class StepError(SolverError):
    """A stage solve failed; carries the step index for checkpointing."""

    def __init__(self, step_index: int, stage: int, cause: Exception):
        self.step_index = step_index
        self.stage = stage
        super().__init__(f"step {step_index} stage {stage} failed: {cause}")


@dataclass
class IntegratorSettings:
    method: str = "RK4"
    h: float = 1800.0            # seconds
    horizon: float = 864000.0    # seconds
    time_scale: float = DEFAULT_TIME_SCALE

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.h <= 0.0:
            raise ValueError("timestep must be positive")
        if self.horizon < self.h:
            raise ValueError("horizon must cover at least one step")

    @property
    def dt(self) -> float:
        """Dimensionless step size."""
        return self.h / self.time_scale

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.h))


@dataclass
class SimState:
    t: float                     # seconds
    seeds: SeedCloud
    warm_weights: WeightVector
    step_index: int = 0
    prev_rhs: np.ndarray | None = None   # AB2 history (dimensionless velocity)


def velocities_from_offsets(offsets: np.ndarray) -> np.ndarray:
    """J (z - C) given C - z; the third component is identically zero."""
    vel = np.zeros((offsets.shape[0], 3))
    vel[:, 0] = offsets[:, 1]
    vel[:, 1] = -offsets[:, 0]
    return vel


def rhs_3d(seeds: SeedCloud, domain: Domain, warm: WeightVector | None,
           settings: SolverSettings, builder: DiagramBuilder | None = None):
    """Particle velocities for the 3D system plus warm-start data.

    Returns (velocities, weights, diagram); velocity third components are
    exactly zero so the vertical particle coordinate is invariant.
    """
    w, diagram, _report = solve_ot(seeds, domain, warm_start=warm,
                                   settings=settings, builder=builder)
    vel = velocities_from_offsets(diagram.centroid_offsets())
    return vel, w, diagram


def rhs_2d(positions2: np.ndarray, domain2: Domain2D, warm: WeightVector | None,
           settings: SolverSettings, mass=None):
    """2D benchmark velocities ``J2 (c - (z.e1) e1)``.

    Returns (velocities2, weights, (areas, centroids2, m2_2d)).
    """
    from .geometry import embed_seeds_2d
    seeds3 = embed_seeds_2d(positions2, mass=mass)
    w, diagram, _report = solve_ot(seeds3, domain2.embed(), warm_start=warm,
                                   settings=settings)
    areas = diagram.volumes
    m2_2d = diagram.second_moments - areas / 12.0
    # centroid in the seed's own frame (periodic-safe)
    cen2 = positions2 + diagram.centroid_offsets()[:, :2]
    vel = np.empty_like(positions2)
    vel[:, 0] = -cen2[:, 1]
    vel[:, 1] = cen2[:, 0] - positions2[:, 0]
    return vel, w, (areas, cen2, m2_2d)


def total_energy_3d(diagram: LaguerreDiagram, seeds: SeedCloud) -> float:
    """Sum of per-cell second moments about the seeds."""
    return float(diagram.second_moments.sum())


def total_energy_2d(areas: np.ndarray, m2_2d: np.ndarray,
                    positions2: np.ndarray) -> float:
    """Half of (second moments minus the vertical-coordinate correction)."""
    z2 = positions2[:, 1]
    return 0.5 * float((m2_2d - z2 * z2 * areas).sum())


class TransportRhs:
    """Stateful RHS evaluator binding domain, masses and solver settings.

    Persists the tessellator's candidate-count hint between evaluations and
    counts solves.  When a stage solve fails with a stale warm start (cells
    of far-out seeds can empty under small seed motion), the evaluator
    retries along the straight line from the last successfully solved
    configuration, which is far cheaper than a cold restart.
    """

    def __init__(self, domain: Domain, settings: SolverSettings):
        self.domain = domain
        self.settings = settings
        self.k_hint: int | None = None
        self.solve_count = 0
        self.newton_iterations = 0
        self.repair_count = 0
        self._last_good: tuple[np.ndarray, WeightVector] | None = None

    def _solve(self, seeds: SeedCloud, warm: WeightVector | None):
        builder = DiagramBuilder(seeds, self.domain, k_hint=self.k_hint)
        out = solve_ot(seeds, self.domain, warm_start=warm,
                       settings=self.settings, builder=builder)
        self.k_hint = builder._k
        return out

    def _solve_with_repair(self, seeds: SeedCloud, warm: WeightVector | None):
        try:
            return self._solve(seeds, warm)
        except SolverError:
            if self._last_good is None:
                raise
        # bisect between the last solved positions and the target
        self.repair_count += 1
        z_good, w_good = self._last_good
        z_target = seeds.positions
        w = w_good
        s = 0.0
        ds = 0.5
        for _ in range(24):
            s_try = min(1.0, s + ds)
            cloud = SeedCloud((1.0 - s_try) * z_good + s_try * z_target,
                              mass=seeds.mass)
            try:
                out = self._solve(cloud, w)
            except SolverError:
                ds *= 0.5
                if ds < 2.0 ** -6:
                    raise
                continue
            if s_try >= 1.0:
                return out
            s, w = s_try, out[0]
            ds = min(2.0 * ds, 1.0 - s)
        raise SolverError("bisection repair exhausted its stage budget")

    def velocities(self, seeds: SeedCloud, diagram: LaguerreDiagram):
        return velocities_from_offsets(diagram.centroid_offsets())

    def __call__(self, seeds: SeedCloud, warm: WeightVector | None):
        w, diagram, report = self._solve_with_repair(seeds, warm)
        self._last_good = (seeds.positions.copy(), w)
        self.solve_count += 1
        self.newton_iterations += report.iterations
        return self.velocities(seeds, diagram), w, diagram


def step(state: SimState, method: str, h: float, rhs,
         time_scale: float = DEFAULT_TIME_SCALE) -> tuple[SimState, LaguerreDiagram]:
    """Advance one step; returns the new state and the starting diagram.

    RK4 performs 4 RHS evaluations (hence 4 transport solves), Heun 2 and
    AB2 1; AB2's first step is bootstrapped with Heun.  Warm-start weights
    are taken from the last stage's solve.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    z = state.seeds.positions
    mass = state.seeds.mass
    dt = h / time_scale

    def stage(pos, warm, stage_no):
        try:
            return rhs(SeedCloud(pos, mass=mass), warm)
        except SolverError as exc:
            raise StepError(state.step_index, stage_no, exc) from exc

    prev_rhs = None
    if method == "RK4":
        k1, w1, diag0 = stage(z, state.warm_weights, 1)
        k2, w2, _ = stage(z + 0.5 * dt * k1, w1, 2)
        k3, w3, _ = stage(z + 0.5 * dt * k2, w2, 3)
        k4, w4, _ = stage(z + dt * k3, w3, 4)
        z_new = z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        w_new = w4
    elif method == "Heun":
        k1, w1, diag0 = stage(z, state.warm_weights, 1)
        k2, w2, _ = stage(z + dt * k1, w1, 2)
        z_new = z + 0.5 * dt * (k1 + k2)
        w_new = w2
    else:  # AB2
        k1, w1, diag0 = stage(z, state.warm_weights, 1)
        if state.prev_rhs is None:
            # bootstrap with one Heun step
            k2, w2, _ = stage(z + dt * k1, w1, 2)
            z_new = z + 0.5 * dt * (k1 + k2)
            w_new = w2
        else:
            z_new = z + dt * (1.5 * k1 - 0.5 * state.prev_rhs)
            w_new = w1
        prev_rhs = k1

    new_state = SimState(
        t=state.t + h,
        seeds=SeedCloud(z_new, mass=mass),
        warm_weights=w_new,
        step_index=state.step_index + 1,
        prev_rhs=prev_rhs,
    )
    return new_state, diag0


def integrate(state: SimState, n_steps: int, method: str, h: float, rhs,
              time_scale: float = DEFAULT_TIME_SCALE, on_step=None,
              max_steps: int | None = None) -> SimState:
    """March the state forward; ``on_step(old, new, diagram)`` per step."""
    while state.step_index < n_steps:
        if max_steps is not None and state.step_index >= max_steps:
            break
        new_state, diag0 = step(state, method, h, rhs, time_scale)
        if on_step is not None:
            on_step(state, new_state, diag0)
        state = new_state
    return state
