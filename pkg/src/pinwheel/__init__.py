"""Least-energy pinwheel states of the critical competitive system on R^4.

Orbit-space discretization of circle-invariant fields, Nehari-constrained
Sobolev-gradient minimization with beta continuation toward segregation,
and extraction of the limiting partition and sign-changing nodal fields.
"""

from .symmetry import (
    GaugeTransform,
    OrbitMap,
    OrbitPoint,
    orbit_coords,
    orbit_distance,
    rho_c2,
    rho_fixed_locus,
    rho_orbit,
    rho_orbit_arrays,
    sigma_index,
    tau_c2,
)
from .grid import (
    Field,
    ReducedGrid,
    compose_rho,
    dilate,
    dirichlet_energy,
    field_from_function,
    integrate,
    interpolate,
    interpolate_many,
    lift_to_full,
    lp_norm,
    riemann_sum_full,
)
from .energy import (
    EnergyBreakdown,
    NehariInfeasible,
    PinwheelState,
    SolverConfig,
    bubble,
    energy,
    equivariance_defect,
    gradient,
    nehari_scale,
    overlap_matrix,
    reproject_pinwheel,
    sobolev_constant,
    state_from_first_component,
)
from .solver import (
    ContinuationTrace,
    MassThresholdError,
    MinimizeResult,
    SeedGeometryError,
    TraceEntry,
    beta_continuation,
    concentration_scale,
    gauge_fix,
    half_mass_radius,
    init_seed,
    minimize,
    sup_norm_track,
)
from .partition import (
    CellSolve,
    DegeneratePartitionError,
    DistinctnessVerdict,
    NodalResult,
    OptimalityReport,
    Partition,
    classify_interface,
    count_sign_domains,
    distinctness_check,
    extract_partition,
    nodal_build,
    optimality_report,
    solve_dirichlet_cell,
)
from .io import ConfigError, RunManifest, parse_config

__version__ = "0.1.0"
