"""Cyclone initial condition: seeds displaced by a harmonic pressure field.

The base-state pressure (a baroclinic jet plus barotropic shear) is
harmonic by construction; the surface temperature perturbation enters
through Neumann data on the horizontal lids and is propagated into the
bulk by solving Laplace's equation with a doubly periodic Fourier ansatz.
The Neumann data must integrate to zero over each lid for solvability, so
both boundary functions are shifted by a constant before expanding.

Initial seed positions are grid points displaced by the full pressure
gradient, ``z = x + grad(Phi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import SeedCloud


@dataclass
class CycloneParams:
    shear: float = 0.0        # barotropic shear coefficient
    a: float = 3.66           # channel half-length
    b: float = 1.75           # channel half-width
    c: float = 0.45           # lid height
    amp_bottom: float = 0.15  # bottom Neumann amplitude
    amp_top: float = -0.6     # top Neumann amplitude
    top_shift: float = 1.0    # zonal shift of the top perturbation
    modes: int = 32           # Fourier truncation per axis
    grid: tuple[int, int, int] = (16, 16, 16)
    quad: int = 512           # quadrature grid per axis

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0.0:
            raise ValueError("domain half-widths and height must be positive")
        if self.modes < 1:
            raise ValueError("need at least one Fourier mode")
        if any(g < 1 for g in self.grid):
            raise ValueError("seed grid components must be >= 1")
        if self.quad < 2 * self.modes + 2:
            raise ValueError("quadrature grid too coarse for the truncation")


def h_perturbation(x1, x2):
    """Surface temperature bump: central peak minus two half-strength lobes."""
    def lobe(u, v):
        return (1.0 + (u / 0.5) ** 2 + (v / 0.5) ** 2) ** -1.5

    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    return lobe(x1, x2) - 0.5 * lobe(x1 - 1.0, x2) - 0.5 * lobe(x1 + 1.0, x2)


def base_pressure(x, shear: float):
    """Base-state pressure at points x (…, 3)."""
    x = np.asarray(x, dtype=np.float64)
    x2, x3 = x[..., 1], x[..., 2]
    return (0.5 * (np.arctan2(x2, 1.0 + x3) - np.arctan2(x2, 1.0 - x3))
            - 0.12 * x2 * x3 - 0.5 * shear * (x2 * x2 - x3 * x3))


def grad_base_pressure(x, shear: float):
    """Analytic gradient of the base-state pressure (zero zonal component)."""
    x = np.asarray(x, dtype=np.float64)
    x2, x3 = x[..., 1], x[..., 2]
    dplus = (1.0 + x3) ** 2 + x2 * x2
    dminus = (1.0 - x3) ** 2 + x2 * x2
    g = np.zeros(x.shape)
    g[..., 1] = (0.5 * ((1.0 + x3) / dplus - (1.0 - x3) / dminus)
                 - 0.12 * x3 - shear * x2)
    g[..., 2] = (0.5 * (-x2 / dplus - x2 / dminus)
                 - 0.12 * x2 + shear * x3)
    return g


def _quad_grid(params: CycloneParams):
    """Periodic quadrature nodes (right endpoints excluded)."""
    q = params.quad
    x1 = -params.a + 2.0 * params.a * np.arange(q) / q
    x2 = -params.b + 2.0 * params.b * np.arange(q) / q
    return x1, x2


def _wrap_x1(x1, a: float):
    return -a + np.mod(np.asarray(x1, dtype=np.float64) + a, 2.0 * a)


def boundary_data(params: CycloneParams):
    """Raw Neumann data sampled on the quadrature grid (bottom, top)."""
    x1, x2 = _quad_grid(params)
    xx1, xx2 = np.meshgrid(x1, x2, indexing="ij")
    bottom = params.amp_bottom * h_perturbation(xx1, xx2)
    # the shifted top argument wraps periodically across the zonal seam
    top = params.amp_top * h_perturbation(
        _wrap_x1(xx1 + params.top_shift, params.a), xx2)
    return bottom, top


def compatibility(params: CycloneParams):
    """Lid flux integrals and zero-mean adjusted boundary functions.

    Returns (I0, Ic, bottom_adjusted, top_adjusted) with the grids holding
    the adjusted Neumann samples; the raw integrals do not cancel, so both
    lids are shifted by a constant to make the Neumann problem solvable.
    """
    bottom, top = boundary_data(params)
    cell = (2.0 * params.a / params.quad) * (2.0 * params.b / params.quad)
    i0 = float(bottom.sum() * cell)
    ic = float(top.sum() * cell)
    area = 4.0 * params.a * params.b
    bottom_adj = bottom - i0 / area
    top_adj = top - ic / area
    return i0, ic, bottom_adj, top_adj


def fourier_coefficients(bottom_adj: np.ndarray, top_adj: np.ndarray,
                         params: CycloneParams):
    """Lid-data Fourier coefficients A_nm, B_nm for |n|,|m| <= modes.

    Periodic trapezoid quadrature of the boundary integrals reduces to an
    FFT; the (-1)^(n+m) factor accounts for the grid starting at (-a, -b).
    Arrays are indexed by n, m in [-M, M] via ``np.ix_`` of fftfreq order.
    """
    q = params.quad
    m = params.modes
    ns = np.arange(-m, m + 1)
    idx = ns % q
    sign = np.where((ns[:, None] + ns[None, :]) % 2 == 0, 1.0, -1.0)
    fa = np.fft.fft2(bottom_adj) / q ** 2
    fb = np.fft.fft2(top_adj) / q ** 2
    a_nm = sign * fa[np.ix_(idx, idx)]
    b_nm = sign * fb[np.ix_(idx, idx)]
    return a_nm, b_nm


def wavenumbers(params: CycloneParams) -> np.ndarray:
    ns = np.arange(-params.modes, params.modes + 1)
    return np.pi * np.sqrt((ns[:, None] / params.a) ** 2
                           + (ns[None, :] / params.b) ** 2)


def solve_mode(a_nm: complex, b_nm: complex, k: float, c: float):
    """Exponential coefficients (C, D) of one vertical mode.

    Solves A = k (C - D), B = k (C e^{kc} - D e^{-kc}); not defined for the
    (0, 0) mode, whose coefficients are pinned to zero by the caller.
    """
    if k <= 0.0:
        raise ValueError("the zero mode must not be passed to solve_mode")
    emkc = np.exp(-k * c)
    denom = 1.0 - emkc * emkc          # (e^{kc} - e^{-kc}) e^{-kc}
    ce = (b_nm / k - (a_nm / k) * emkc) / denom   # C e^{kc}
    d = (b_nm * emkc / k - a_nm / k) / denom
    return ce * emkc, d


@dataclass
class FourierSolution:
    """Truncated doubly periodic expansion of the perturbation pressure."""

    a: float
    b: float
    c: float
    modes: int
    coeff_a: np.ndarray
    coeff_b: np.ndarray
    kk: np.ndarray
    coef_c: np.ndarray        # C_nm
    coef_d: np.ndarray        # D_nm
    coef_ce: np.ndarray       # C_nm e^{k c}, bounded for large k c
    i0: float
    ic: float

    @property
    def n_values(self) -> np.ndarray:
        return np.arange(-self.modes, self.modes + 1)

    def _vertical(self, x3):
        """Z_nm(x3) and Z'_nm(x3) in overflow-safe form, shapes (..., n, m)."""
        x3 = np.asarray(x3, dtype=np.float64)[..., None, None]
        k = self.kk
        up = self.coef_ce * np.exp(-k * (self.c - x3))
        down = self.coef_d * np.exp(-k * x3)
        return up + down, k * (up - down)

    def _horizontal(self, x1, x2):
        ns = self.n_values
        e1 = np.exp(1j * np.pi * np.multiply.outer(np.asarray(x1, float), ns) / self.a)
        e2 = np.exp(1j * np.pi * np.multiply.outer(np.asarray(x2, float), ns) / self.b)
        return e1, e2

    def phi(self, x):
        """Perturbation pressure at points x (…, 3); real part of the sum."""
        x = np.asarray(x, dtype=np.float64)
        e1, e2 = self._horizontal(x[..., 0], x[..., 1])
        z, _ = self._vertical(x[..., 2])
        return np.einsum("...n,...m,...nm->...", e1, e2, z).real

    def grad(self, x):
        """Gradient of the perturbation pressure at points x (…, 3)."""
        x = np.asarray(x, dtype=np.float64)
        e1, e2 = self._horizontal(x[..., 0], x[..., 1])
        z, dz = self._vertical(x[..., 2])
        ns = self.n_values
        out = np.empty(x.shape)
        core = np.einsum("...n,...m,...nm->...nm", e1, e2, z)
        out[..., 0] = (core.sum(axis=-1) * (1j * np.pi * ns / self.a)).sum(-1).real
        out[..., 1] = (core.sum(axis=-2) * (1j * np.pi * ns / self.b)).sum(-1).real
        out[..., 2] = np.einsum("...n,...m,...nm->...", e1, e2, dz).real
        return out

    def d_phi_d_x3_at(self, x3: float, x1: np.ndarray, x2: np.ndarray):
        """Vertical derivative on a tensor grid (for boundary checks)."""
        e1, e2 = self._horizontal(x1, x2)
        _, dz = self._vertical(np.float64(x3))
        return np.einsum("pn,qm,nm->pq", e1, e2, dz).real


def build_fourier_solution(params: CycloneParams) -> FourierSolution:
    """Assemble the mode table from the adjusted boundary data."""
    i0, ic, bottom_adj, top_adj = compatibility(params)
    a_nm, b_nm = fourier_coefficients(bottom_adj, top_adj, params)
    kk = wavenumbers(params)
    m = params.modes
    emkc = np.exp(-kk * params.c)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 - emkc * emkc
        ce = (b_nm / kk - (a_nm / kk) * emkc) / denom
        d = (b_nm * emkc / kk - a_nm / kk) / denom
    ce[m, m] = 0.0
    d[m, m] = 0.0
    return FourierSolution(
        a=params.a, b=params.b, c=params.c, modes=m,
        coeff_a=a_nm, coeff_b=b_nm, kk=kk,
        coef_c=ce * emkc, coef_d=d, coef_ce=ce,
        i0=i0, ic=ic)


def perturbation_pressure(x, solution: FourierSolution):
    return solution.phi(x)


def grad_perturbation_pressure(x, solution: FourierSolution):
    return solution.grad(x)


def seed_grid(params: CycloneParams) -> np.ndarray:
    """Cell-center grid on the cyclone domain (no seed on the seams)."""
    n1, n2, n3 = params.grid
    x1 = -params.a + 2.0 * params.a * (np.arange(n1) + 0.5) / n1
    x2 = -params.b + 2.0 * params.b * (np.arange(n2) + 0.5) / n2
    x3 = params.c * (np.arange(n3) + 0.5) / n3
    g = np.stack(np.meshgrid(x1, x2, x3, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)


def generate_seeds(params: CycloneParams,
                   solution: FourierSolution | None = None) -> SeedCloud:
    """Initial geostrophic positions z = x + grad(Phi) with uniform masses."""
    if solution is None:
        solution = build_fourier_solution(params)
    grid = seed_grid(params)
    disp = grad_base_pressure(grid, params.shear)
    chunk = 4096
    for lo in range(0, len(grid), chunk):
        hi = min(lo + chunk, len(grid))
        disp[lo:hi] += solution.grad(grid[lo:hi])
    return SeedCloud(grid + disp)


def dual_warm_weights(params: CycloneParams,
                      solution: FourierSolution | None = None) -> np.ndarray:
    """Continuum transport potential evaluated on the seed grid.

    The initial cloud is the gradient displacement of a grid, so the
    Kantorovich weights of the discrete problem are approximated by the
    Brenier dual of the continuum map: w = |grad(Phi)|^2 + 2 Phi at the
    grid points.  Solver warm-started here converges in a few steps even
    for seeds displaced far outside the domain.
    """
    if solution is None:
        solution = build_fourier_solution(params)
    grid = seed_grid(params)
    phi = base_pressure(grid, params.shear)
    disp = grad_base_pressure(grid, params.shear)
    chunk = 4096
    for lo in range(0, len(grid), chunk):
        hi = min(lo + chunk, len(grid))
        phi[lo:hi] += solution.phi(grid[lo:hi])
        disp[lo:hi] += solution.grad(grid[lo:hi])
    w = np.einsum("ij,ij->i", disp, disp) + 2.0 * phi
    return w - w.mean()
