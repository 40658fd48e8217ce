"""Distributed generalized Nash equilibrium seeking on communication graphs."""

from .augment import (
    AgentState,
    AugmentedPoint,
    SelectionPair,
    consensus_decompose,
    consensus_residual,
    multiplier_spread,
    selection_matrices,
    stack,
    unstack,
)
from .engine import (
    NeighborMessage,
    NumericError,
    ProtocolError,
    StopRule,
    Trajectory,
    agent_step,
    baseline_full_info_step,
    run,
    run_baseline,
    stacked_step,
    sync_round,
)
from .game import (
    CournotParams,
    CournotTemplate,
    Game,
    GameConstants,
    ModelError,
    affine_game,
    cournot_game,
    extended_pseudo_gradient,
    make_cournot,
    partial_gradient,
    project_box,
    pseudo_gradient,
    quadratic_constants,
)
from .graph import (
    CommGraph,
    DisconnectedGraphError,
    GraphError,
    SpectralSummary,
    build_graph,
    fig2_graph,
    kron_laplacian,
    path_graph,
    random_connected_graph,
    ring_graph,
    spectral_summary,
)
from .tuning import (
    TuningBundle,
    assemble_phi,
    certify,
    cocoercivity_beta,
    make_tuning,
    practical_tuning,
    psi_and_cmin,
    step_size_bounds,
)
from .verify import (
    KKTReport,
    OracleSolution,
    inclusion_residual,
    kkt_residual,
    phi_descent_check,
    sample_cocoercivity,
    sample_restricted_monotonicity,
    solve_vi_oracle,
)

__version__ = "0.1.0"
