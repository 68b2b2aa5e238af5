"""Multi-cell mixed near-field/far-field downlink simulation with rotatable
antenna arrays: geometry and channel models, closed-form inter-cell
interference analysis, a two-stage beamformer optimizer, swarm-based
rotation search, and a benchmark experiment harness."""

from .scenario import (
    BaseStation,
    ChannelSet,
    ChannelVector,
    Regime,
    Scenario,
    SystemConfig,
    UserPlacement,
    UserRegion,
    build_channels,
    canonical_scenario,
    dbm_to_watt,
    effective_rayleigh_distance,
    element_distance,
    element_distance_taylor,
    far_steering,
    inter_cell_angle,
    inter_cell_distance,
    load_scenario,
    near_steering,
    watt_to_dbm,
)
from .interference import (
    DegenerateRotationError,
    GammaPair,
    TwoCellCase,
    fresnel_c,
    fresnel_s,
    g_function,
    gamma_params,
    interference_free_bound,
    near_cross_correlation,
    optimal_rotation,
    power_grid_search,
    rho_approx,
    rho_exact,
    two_cell_case,
    two_cell_sum_rate,
)
from .beamforming import (
    BeamformerSet,
    ScaError,
    ScaResult,
    SumRateReport,
    ZfInfeasibleError,
    analog_gram,
    analog_mrt,
    covariance_rates,
    effective_channels,
    extract_rank_one,
    interference_gradients,
    rates_from_channels,
    rates_from_effective,
    sca_digital,
    zf_all_cells,
    zf_digital,
)
from .subproblem import (
    SubproblemError,
    SubproblemSolution,
    solve_relaxed_subproblem,
    subproblem_objective,
    user_totals,
)
from .rotation import (
    JointResult,
    PsoConfig,
    PsoResult,
    inner_beamformers,
    joint_optimize,
    pso_optimize,
)
from .harness import (
    ExperimentSpec,
    ResultRow,
    SchemeResult,
    place_users,
    run_experiment,
    run_scheme,
    verify_results,
)

__version__ = "0.1.0"
