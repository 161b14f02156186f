"""Clamped biharmonic plates on glued 1D supports.

Solvers for the clamped plate problem on a domain minus a connected support
set, its cracked-elasticity dual certificate, simulated-annealing search for
optimal supports under a length penalty, structural regularity audits, and a
3D thin-plate energy lab verifying the dimension-reduction scaling on the
explicit recovery deformation.
"""

__version__ = "0.1.0"

from .audit import (
    ahlfors_audit,
    ball_length,
    continuity_audit,
    griffith_competitor_audit,
    h2_distance,
    lattice_circle,
    poincare_probe,
    thin_poincare_probe,
)
from .biharmonic import (
    BiharmonicSystem,
    SolveReport,
    assemble,
    compliance_identity_check,
    hessian_field,
    solve,
    solve_dense,
)
from .dual import (
    CrackMesh,
    DualReport,
    DualSolution,
    SaddleReport,
    build_G,
    duality_gap,
    saddle_check,
    solve_dual,
    solve_poisson,
)
from .errors import (
    BallNotInteriorError,
    CenterNotOnKError,
    ConfigError,
    CutoffTooWideError,
    DegenerateComponentError,
    EmptyClampSetError,
    NoConvergenceError,
    NoLegalMoveError,
    PlateSupportError,
)
from .gamma3d import (
    EnergyBreakdown,
    Plate3DState,
    dist_SO3,
    energy_Eh,
    energy_breakdown,
    extract_displacements,
    gamma_limit_experiment,
    identity_state,
    limit_functional,
    load_work,
    optimal_profile_correction,
    optimal_profile_correction_numeric,
    q2_isotropic,
    q3_isotropic,
    recovery_sequence,
    rigidity_probe,
)
from .grid import (
    Grid2D,
    ScalarField2D,
    SupportGraph,
    TensorField2D,
    VectorField2D,
    clamp_set,
    dilate,
    distance_to_support,
    hausdorff_distance,
    is_connected,
    length,
    load_support,
    refine_support,
    save_support,
)
from .optimize import OptimizerConfig, RunRecord, objective, optimize, pareto_sweep, propose_move
