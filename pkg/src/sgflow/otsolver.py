"""Semi-discrete optimal transport by a damped Newton iteration.

Finds Kantorovich weights making every Laguerre cell carry its target mass.
The Newton direction comes from the Jacobian of cell volumes with respect
to weights (a weighted graph Laplacian); steps are halved until every cell
keeps at least half the smallest initial/target volume and the residual
sup-norm strictly decreases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import (
    DiagramBuilder,
    Domain,
    GeometryError,
    LaguerreDiagram,
    SeedCloud,
    WeightVector,
)

logger = logging.getLogger(__name__)

MIN_TAU = 2.0 ** -20


class SolverError(Exception):
    pass


class InitializationError(SolverError):
    """No starting weights produced all-nonempty cells."""


class DampingError(SolverError):
    """Step-halving underflowed without an acceptable step."""


class DegenerateGeometryError(SolverError):
    """Interface with zero seed separation but positive area."""


class ConvergenceError(SolverError):
    """Newton did not reach the mass tolerance within max_iterations."""

    def __init__(self, message: str, report: "SolveReport"):
        super().__init__(message)
        self.report = report


@dataclass
class SolverSettings:
    eta: float = 1e-3               # relative per-cell mass tolerance
    max_iterations: int = 50
    linear_solver_tolerance: float = 1e-10

    def __post_init__(self):
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class SolveReport:
    iterations: int
    max_rel_mass_error: float
    damping_halvings: int
    converged: bool


@dataclass(frozen=True)
class AffineTransform:
    """Isotropic scaling plus translation, x' = scale * x + offset."""

    scale: float
    offset: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(x, dtype=np.float64) + self.offset

    def invert(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.offset) / self.scale

    @property
    def inverse(self) -> "AffineTransform":
        return AffineTransform(1.0 / self.scale, -self.offset / self.scale)


def rescale_for_solve(seeds: SeedCloud, domain: Domain) -> tuple[SeedCloud, AffineTransform]:
    """Affine map taking the seed bounding box into the domain box.

    Solving with the transformed seeds and pulling the weights back through
    :func:`pullback_weights` reproduces the diagram of the original seeds
    exactly, so reported weights always refer to the original cloud.
    """
    pos = seeds.positions
    bb_lo = pos.min(axis=0)
    bb_hi = pos.max(axis=0)
    widths = bb_hi - bb_lo
    dom_w = domain.widths
    ratios = [dom_w[k] / widths[k] for k in range(3) if widths[k] > 0.0]
    scale = min(1.0, min(ratios)) if ratios else 1.0
    bb_center = 0.5 * (bb_lo + bb_hi)
    if scale == 1.0 and np.all(bb_lo >= domain.lo) and np.all(bb_hi <= domain.hi):
        offset = np.zeros(3)
    else:
        offset = domain.center - scale * bb_center
    transform = AffineTransform(scale, offset)
    return SeedCloud(transform.apply(pos), mass=seeds.mass), transform


def pullback_weights(w_prime: np.ndarray, seeds: SeedCloud,
                     transform: AffineTransform) -> WeightVector:
    """Weights on the original seeds reproducing the transformed diagram.

    The Laguerre cells of (s z + t, w') coincide with those of (z, w) for
    w = w'/s + (1 - s)|z|^2 - 2 t.z; the constant part is gauged away.
    """
    z = seeds.positions
    s = transform.scale
    t = transform.offset
    w = w_prime / s + (1.0 - s) * np.einsum("ij,ij->i", z, z) - 2.0 * z @ t
    return WeightVector(w).normalized()


def ot_hessian(diagram: LaguerreDiagram, seeds: SeedCloud) -> sp.csr_matrix:
    """Jacobian of cell volumes with respect to the weights.

    Entry (i, j) is d vol(L_i) / d w_j = -area_ij / (2 dist_ij) for i != j,
    with the diagonal the negated row sum; interfaces between a cell and its
    own periodic image do not move with the weights and are skipped.  The
    matrix is symmetric positive semi-definite with the constant vector in
    its kernel when the diagram is connected.
    """
    n = diagram.n
    ptr = diagram._nbr_ptr
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(ptr))
    cols = diagram._nbr_j
    area = diagram._nbr_area
    dist = diagram._nbr_dist
    off = rows != cols
    if np.any((dist <= 0.0) & off & (area > 0.0)):
        raise DegenerateGeometryError(
            "zero seed separation with positive interface area")
    rows, cols = rows[off], cols[off]
    vals = -area[off] / (2.0 * dist[off])
    diag = np.zeros(n)
    np.add.at(diag, rows, -vals)
    h = sp.coo_matrix(
        (np.concatenate([vals, diag]),
         (np.concatenate([rows, np.arange(n)]),
          np.concatenate([cols, np.arange(n)]))),
        shape=(n, n))
    return h.tocsr()


def _solve_direction(hessian: sp.csr_matrix, residual: np.ndarray,
                     tol: float) -> np.ndarray:
    """Solve H d = r on the gauge-orthogonal complement (Jacobi-CG)."""
    r = residual - residual.mean()
    d = hessian.diagonal()
    if np.any((d <= 0.0) & (np.abs(r) > 0.0)):
        raise DegenerateGeometryError(
            "a cell with nonzero residual has no weight-dependent interface")
    scale = np.where(d > 0.0, 1.0 / d, 1.0)
    precond = spla.LinearOperator(hessian.shape, matvec=lambda x: scale * x)
    sol, info = spla.cg(hessian, r, rtol=tol, atol=0.0, maxiter=10 * hessian.shape[0],
                        M=precond)
    if info > 0:
        logger.debug("cg reached maxiter (info=%d); using last iterate", info)
    return sol - sol.mean()


def newton_step(weights: WeightVector, residual: np.ndarray,
                hessian: sp.csr_matrix, diagram: LaguerreDiagram, *,
                builder: DiagramBuilder, volume_floor: float,
                settings: SolverSettings, min_tau: float = MIN_TAU):
    """One damped Newton update of the weights.

    Returns (weights, diagram, tau, halvings) for the accepted step.  A
    step is accepted once every cell volume stays above ``volume_floor``
    and the residual sup-norm strictly decreases.
    """
    sup0 = float(np.max(np.abs(residual)))
    if sup0 == 0.0:
        return weights, diagram, 1.0, 0
    delta = _solve_direction(hessian, residual, settings.linear_solver_tolerance)
    targets = builder.seeds.mass * builder.domain.volume
    tau = 1.0
    halvings = 0
    while tau >= min_tau:
        trial = WeightVector(weights.w - tau * delta).normalized()
        try:
            diag_try = builder.build(trial)
        except GeometryError:
            # weights so extreme the image set cannot cover the domain
            tau *= 0.5
            halvings += 1
            continue
        res_try = diag_try.volumes - targets
        sup_try = float(np.max(np.abs(res_try)))
        if float(diag_try.volumes.min()) >= volume_floor and sup_try < sup0:
            return trial, diag_try, tau, halvings
        tau *= 0.5
        halvings += 1
    raise DampingError(
        f"step-halving underflowed below {min_tau} (residual sup {sup0:g})")


def _initial_weights(seeds: SeedCloud, domain: Domain) -> WeightVector:
    """Zero weights in rescaled coordinates, pulled back to the originals.

    The pullback identity needs scaling to commute with the periodic image
    lattice, so on periodic domains with a genuine rescaling the
    distance-to-domain offsets are used instead (they make the projection
    of every seed a point of its own cell).
    """
    transformed, transform = rescale_for_solve(seeds, domain)
    if transform.scale != 1.0 and any(domain.periodic):
        return _fallback_weights(seeds, domain)
    return pullback_weights(np.zeros(seeds.n), seeds, transform)


def _fallback_weights(seeds: SeedCloud, domain: Domain) -> WeightVector:
    """Squared distance-to-domain offsets; favors far-out seeds."""
    wrapped = domain.wrap(seeds.positions)
    clamped = np.clip(wrapped, domain.lo, domain.hi)
    d2 = np.einsum("ij,ij->i", wrapped - clamped, wrapped - clamped)
    return WeightVector(d2).normalized()


def _solve_attempt(seeds: SeedCloud, domain: Domain,
                   warm_start: WeightVector | None,
                   settings: SolverSettings,
                   builder: DiagramBuilder,
                   min_tau: float = MIN_TAU):
    """One damped-Newton run from the best available initialization."""
    targets = seeds.mass * domain.volume

    # among the available starts, take the one with the fattest thinnest
    # cell; a sliver-free start is what keeps the damping floor workable
    attempts = []
    if warm_start is not None:
        attempts.append(warm_start.normalized())
    attempts.append(_initial_weights(seeds, domain))
    attempts.append(_fallback_weights(seeds, domain))
    w = None
    diagram = None
    best_min = 0.0
    for cand in attempts:
        try:
            diag = builder.build(cand)
        except GeometryError:
            continue
        m = float(diag.volumes.min())
        if m > best_min:
            w, diagram, best_min = cand, diag, m
            if m > 0.1 * float(targets.min()):
                break
    if diagram is None:
        raise InitializationError(
            "could not find starting weights with all-nonempty cells")

    volume_floor = 0.5 * min(float(diagram.volumes.min()), float(targets.min()))
    halvings_total = 0
    iterations = 0
    for iteration in range(settings.max_iterations):
        residual = diagram.volumes - targets
        rel_err = float(np.max(np.abs(residual) / targets))
        if rel_err <= settings.eta:
            report = SolveReport(iterations, rel_err, halvings_total, True)
            return w, diagram, report
        hess = ot_hessian(diagram, seeds)
        w, diagram, tau, halvings = newton_step(
            w, residual, hess, diagram,
            builder=builder, volume_floor=volume_floor, settings=settings,
            min_tau=min_tau)
        halvings_total += halvings
        iterations = iteration + 1
        logger.debug("newton it=%d sup=%.3e tau=%.4f",
                     iterations, float(np.max(np.abs(residual))), tau)

    residual = diagram.volumes - targets
    rel_err = float(np.max(np.abs(residual) / targets))
    if rel_err <= settings.eta:
        report = SolveReport(iterations, rel_err, halvings_total, True)
        return w, diagram, report
    report = SolveReport(iterations, rel_err, halvings_total, False)
    raise ConvergenceError(
        f"no convergence in {settings.max_iterations} iterations "
        f"(max relative mass error {rel_err:g})", report)


def _graduated_solve(seeds: SeedCloud, domain: Domain,
                     settings: SolverSettings, builder: DiagramBuilder):
    """Homotopy fallback for hard cold starts.

    Seeds far outside the domain can defeat every static initialization
    (their cells touch the domain in a sliver).  Shrinking the cloud into
    the domain with the rescaling map, solving there, and marching the
    cloud back out with warm starts keeps every intermediate problem
    well-conditioned; the intermediates only feed warm starts, so they run
    at a loose mass tolerance.
    """
    z = seeds.positions
    # compress each axis just enough to fit the domain; axes already inside
    # are left alone so the march distance stays short
    wrapped = domain.wrap(z)
    anchor = wrapped.copy()
    for k in range(3):
        if domain.periodic[k]:
            continue
        lo, hi = wrapped[:, k].min(), wrapped[:, k].max()
        width = hi - lo
        if width <= 0.0:
            anchor[:, k] = np.clip(wrapped[:, k], domain.lo[k], domain.hi[k])
            continue
        ratio = min(1.0, (domain.hi[k] - domain.lo[k]) / width)
        center = 0.5 * (lo + hi)
        target = domain.center[k] if ratio < 1.0 else center
        anchor[:, k] = target + ratio * (wrapped[:, k] - center)
    z = wrapped
    loose = SolverSettings(eta=max(settings.eta, 0.02),
                           max_iterations=settings.max_iterations,
                           linear_solver_tolerance=settings.linear_solver_tolerance)
    w = None
    s = 0.0
    ds = 0.25
    ds_cap = 1.0
    stages = 0
    while True:
        stages += 1
        if stages > 128:
            raise ConvergenceError(
                "graduated homotopy exceeded its stage budget",
                SolveReport(0, np.inf, 0, False))
        first = w is None
        s_try = 0.0 if first else min(1.0, s + ds)
        pos = (1.0 - s_try) * anchor + s_try * z
        cloud = SeedCloud(pos, mass=seeds.mass)
        final = s_try >= 1.0
        b = builder if final else DiagramBuilder(cloud, domain)
        try:
            w_new, diagram, report = _solve_attempt(
                cloud, domain, w, settings if final else loose, b,
                min_tau=MIN_TAU if final else 2.0 ** -10)
        except (DampingError, InitializationError, ConvergenceError):
            if first:
                raise
            ds *= 0.5
            ds_cap = ds  # an increment that failed once will fail again
            if ds < 1.0 / 256.0:
                raise
            continue
        w = WeightVector(w_new.w)
        if final:
            logger.debug("graduated solve reached s=1 in %d stages", stages)
            return w_new, diagram, report
        s = s_try
        ds = max(min(2.0 * ds, ds_cap, 1.0 - s), 1e-9)


def solve_ot(seeds: SeedCloud, domain: Domain,
             warm_start: WeightVector | None = None,
             settings: SolverSettings | None = None,
             builder: DiagramBuilder | None = None):
    """Weights equalizing cell masses, with the final diagram and a report.

    Deterministic given identical inputs and seed ordering.  Raises
    :class:`ConvergenceError` (carrying the report) when max_iterations is
    exhausted and :class:`InitializationError` when no starting weights give
    all-nonempty cells.
    """
    settings = settings or SolverSettings()
    if builder is None:
        builder = DiagramBuilder(seeds, domain)
    try:
        return _solve_attempt(seeds, domain, warm_start, settings, builder)
    except (DampingError, InitializationError):
        logger.debug("direct solve failed; switching to graduated homotopy")
        return _graduated_solve(seeds, domain, settings, builder)
