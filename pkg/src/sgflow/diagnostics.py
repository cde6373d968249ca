"""Physical field extraction and error metrics.

Velocity fields are piecewise constant on Laguerre cells: each cell carries
the difference between its seed and its centroid, rotated into zonal and
meridional components.  Trajectory errors are measured with the squared
Wasserstein-2 distance, either exactly (linear assignment, small N) or via
the debiased entropic divergence (Sinkhorn, any N).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .geometry import LaguerreDiagram, SeedCloud


class DiagnosticsError(Exception):
    pass


@dataclass
class FieldSample:
    """Per-cell piecewise-constant field values."""

    zvel: np.ndarray
    mvel: np.ndarray
    tvel: np.ndarray
    temperature: np.ndarray
    volume: np.ndarray


def extract_fields(seeds: SeedCloud, diagram: LaguerreDiagram) -> FieldSample:
    """Zonal/meridional/total velocity and temperature per cell."""
    off = diagram.centroid_offsets()      # centroid minus seed
    zvel = off[:, 1]                      # C2 - z2
    mvel = -off[:, 0]                     # z1 - C1
    return FieldSample(
        zvel=zvel,
        mvel=mvel,
        tvel=np.sqrt(zvel * zvel + mvel * mvel),
        temperature=seeds.positions[:, 2].copy(),
        volume=diagram.volumes.copy(),
    )


def extract_fields_2d(positions2: np.ndarray, centroids2: np.ndarray,
                      c1: float = 1.0, c2: float = 1.0):
    """2D benchmark fields: meridional velocity and temperature per cell."""
    v = c1 * (positions2[:, 0] - centroids2[:, 0])
    theta = c2 * positions2[:, 1]
    return v, theta


def rmsv(values: np.ndarray, diagram: LaguerreDiagram) -> float:
    """Volume-weighted root mean square of a piecewise-constant field."""
    v = np.asarray(values, dtype=np.float64)
    total = diagram.domain.volume
    return float(np.sqrt(np.sum(v * v * diagram.volumes) / total))


def w2_exact(cloud_a: np.ndarray, cloud_b: np.ndarray) -> float:
    """Squared Wasserstein-2 between equal-size uniform point clouds.

    Exact optimal assignment on the squared-distance matrix; quadratic
    memory, intended for N up to a few thousand.
    """
    a = np.atleast_2d(np.asarray(cloud_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(cloud_b, dtype=np.float64))
    if a.shape != b.shape:
        raise DiagnosticsError(
            f"point clouds must have equal shape, got {a.shape} vs {b.shape}")
    cost = cdist(a, b, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def default_sinkhorn_epsilon(cloud: np.ndarray) -> float:
    """1e-2 times the mean nearest-neighbor squared distance."""
    pts = np.atleast_2d(np.asarray(cloud, dtype=np.float64))
    if len(pts) < 2:
        return 1e-2
    d, _ = cKDTree(pts).query(pts, k=2, workers=-1)
    return float(1e-2 * np.mean(d[:, 1] ** 2))


def _sinkhorn_value(cost: np.ndarray, epsilon: float, tol: float,
                    max_iter: int) -> float:
    """Dual value of entropic OT between uniform measures (log domain).

    Convergence is declared when one full update changes the dual
    objective by less than ``tol``; near-degenerate assignments let the
    potentials wander in an almost-flat direction long after the value
    (the only quantity entering the divergence) has stabilized.
    """
    na, nb = cost.shape
    log_a = -np.log(na)
    log_b = -np.log(nb)
    f = np.zeros(na)
    g = np.zeros(nb)
    # epsilon scaling keeps the iteration count modest for small epsilon
    eps_ladder = []
    e = max(float(cost.max()), epsilon)
    while e > epsilon * 1.5:
        eps_ladder.append(e)
        e *= 0.5
    eps_ladder.append(epsilon)
    value = np.inf
    for e in eps_ladder:
        last = e == epsilon
        for _ in range(max_iter if last else min(200, max_iter)):
            g = -e * logsumexp((f[:, None] - cost) / e + log_a, axis=0)
            f = -e * logsumexp((g[None, :] - cost) / e + log_b, axis=1)
            value_new = float(f.mean() + g.mean())
            delta = abs(value_new - value)
            value = value_new
            if delta < (tol if last else 1e-6 * max(e, 1.0)):
                break
        else:
            if last:
                raise DiagnosticsError(
                    f"sinkhorn did not converge within {max_iter} iterations "
                    f"at epsilon={epsilon:g}")
    return value


def sinkhorn_w2(cloud_a: np.ndarray, cloud_b: np.ndarray,
                epsilon: float | None = None, max_iter: int = 5000,
                tol: float = 1e-9) -> float:
    """Debiased Sinkhorn divergence approximating squared Wasserstein-2.

    S = OT(A, B) - (OT(A, A) + OT(B, B)) / 2 with the quadratic cost;
    identical clouds give exactly zero.
    """
    a = np.atleast_2d(np.asarray(cloud_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(cloud_b, dtype=np.float64))
    if epsilon is None:
        epsilon = default_sinkhorn_epsilon(a)
    if epsilon <= 0.0:
        raise DiagnosticsError("epsilon must be positive")
    ab = _sinkhorn_value(cdist(a, b, "sqeuclidean"), epsilon, tol, max_iter)
    aa = _sinkhorn_value(cdist(a, a, "sqeuclidean"), epsilon, tol, max_iter)
    bb = _sinkhorn_value(cdist(b, b, "sqeuclidean"), epsilon, tol, max_iter)
    return ab - 0.5 * (aa + bb)


def energy_error_series(energies: np.ndarray) -> tuple[np.ndarray, float]:
    """Signed relative energy errors and their maximum magnitude.

    The reference is the arithmetic mean of the recorded energies; the
    signed error at each step is (mean - E) / mean.
    """
    e = np.asarray(energies, dtype=np.float64)
    if e.size < 1:
        raise DiagnosticsError("need at least one recorded energy")
    mean = e.mean()
    errors = (mean - e) / mean
    return errors, float(np.max(np.abs(errors)))
