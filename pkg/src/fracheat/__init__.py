"""fracheat: discrete fracture-matrix heat transport with flow-based upscaling."""

from .basis import (
    BasisSet,
    SmoothingControls,
    basis_energy,
    check_diagonal_positivity,
    constant_basis,
    interaction_regions,
    restriction_matrix,
    smooth_basis,
)
from .coarse_transport import (
    CoarseSystem,
    build_coarse_system,
    coarse_advection,
    coarse_conduction,
    energy_error,
    prolong_to_fine,
    simulate_coarse,
)
from .coarsen import (
    CoarsenParams,
    IndicatorField,
    Partition,
    block_partition,
    build_partition,
    compute_tof,
    distance_partition,
    enforce_connected,
    indicator_partition,
    intersect_partitions,
    lift_partition,
    merge_small,
    partition_stats,
    split_hybrid,
)
from .config import ConfigError, Scenario, load_scenario
from .flow import (
    FlowProps,
    FluxField,
    SolverError,
    Well,
    assemble_pressure,
    compute_fluxes,
    cubic_law,
    half_transmissibility,
    resolve_wells,
    solve_flow,
    solve_pressure,
)
from .fracgen import GenSpec, generate
from .mesh import (
    FineGrid,
    FractureNetwork,
    GridError,
    GridFormatError,
    build_cartesian_dfm,
    distance_to_fracture,
    export_grid,
    import_grid,
    rasterize_network,
)
from .transport import (
    Schedule,
    ThermalProps,
    TransportState,
    assemble_advection,
    assemble_conduction,
    bdf2_step,
    build_fine_system,
    effective_capacity,
    peclet_field,
    production_temperature,
    simulate,
    simulate_fine,
)

__version__ = "0.1.0"
