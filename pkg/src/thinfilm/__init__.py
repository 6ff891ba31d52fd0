"""Lagrangian minimizing-movement toolkit for the rescaled thin-film flow
v_t = (x v - v v_xxx)_x: density representations, Lyapunov functionals,
exact 1D optimal transport, the per-step variational scheme, inequality
verification, decay-rate fits and a finite-difference cross check."""

from .density import (
    GridDensity,
    QuantileDensity,
    SmythHill,
    smyth_hill,
    grid_to_quantile,
    quantile_to_grid,
    to_selfsimilar_frame,
    from_selfsimilar_frame,
)
from .functionals import (
    FunctionalRecord,
    alpha,
    beta,
    energy,
    energy_parts,
    entropy,
    moment,
    sup_norm,
    dissipation,
    dissipation_literal_gradient,
    cross_dissipation_gap,
    weighted_norm_sq,
    l1_distance,
    record,
    make_record_context,
)
from .transport import (
    TransportPlan,
    w2,
    w2_atoms,
    w2_bruteforce,
    displacement_interpolate,
    pushforward,
)
from .jko import (
    JkoConfig,
    JkoStepDiagnostics,
    JkoTrajectory,
    Snapshot,
    StepFailure,
    objective,
    step,
    el_residual,
    run,
    weak_form_residual,
)

__version__ = "0.1.0"
