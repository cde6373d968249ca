"""Semi-discrete optimal transport engine for semi-geostrophic flow."""

__version__ = "0.1.0"

from .geometry import (
    DiagramBuilder,
    Domain,
    Domain2D,
    DuplicateSeedError,
    GeometryError,
    LaguerreDiagram,
    SeedCloud,
    WeightVector,
    build_diagram,
    build_diagram_2d,
    cell_moments,
    periodic_images,
)
from .otsolver import (
    ConvergenceError,
    SolveReport,
    SolverError,
    SolverSettings,
    newton_step,
    ot_hessian,
    rescale_for_solve,
    solve_ot,
)
from .dynamics import (
    IntegratorSettings,
    SimState,
    StepError,
    integrate,
    rhs_2d,
    rhs_3d,
    step,
    total_energy_2d,
    total_energy_3d,
)
from .initcond import (
    CycloneParams,
    FourierSolution,
    base_pressure,
    build_fourier_solution,
    compatibility,
    fourier_coefficients,
    generate_seeds,
    grad_base_pressure,
    h_perturbation,
    solve_mode,
)
from .diagnostics import (
    FieldSample,
    energy_error_series,
    extract_fields,
    rmsv,
    sinkhorn_w2,
    w2_exact,
)
