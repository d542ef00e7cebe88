"""Position recovery and control from anchor-distance measurements.

Differencing squared distance readings pairwise cancels their quadratic
term, so an agent's position follows from a small linear least-squares
solve.  On top of that recovery this package provides a homing controller
with its stability diagnostics, a formation controller where agents range
off each other, simulation/sweep protocols, and a CLI that archives
experiments as CSV + SVG artifacts.
"""

from .core import NoiseSpec, distance, make_pairs, measure_all
from .coupling import (
    CouplingComponents,
    DegenerateAnchors,
    build_components,
    coupled_measurements,
    recover_position,
)
from .formation import (
    Alignment,
    DegenerateConfiguration,
    FormationPolicy,
    agent_coupled_measurements,
    formation_control,
    formation_error,
    kabsch_align,
    measurement_matrix,
)
from .homing import (
    HomingPolicy,
    RigidTransform,
    control,
    estimate_position,
    ideal_control,
    loop_is_stable,
    lyapunov,
    predicted_equilibrium,
    rotation2d,
    rotation_is_stable,
    transform_anchors,
)
from .sim import (
    FormationSystem,
    HomingSystem,
    Outcome,
    SimConfig,
    SweepResult,
    TrialVerdict,
    formation_trace,
    noise_experiment,
    offset_experiment_formation,
    rotation_sweep_formation,
    rotation_sweep_homing,
    run_trial,
    step_formation,
    step_homing,
)
from .svgplot import emit_plot

__version__ = "0.1.0"

__all__ = [
    "Alignment",
    "CouplingComponents",
    "DegenerateAnchors",
    "DegenerateConfiguration",
    "FormationPolicy",
    "FormationSystem",
    "HomingPolicy",
    "HomingSystem",
    "NoiseSpec",
    "Outcome",
    "RigidTransform",
    "SimConfig",
    "SweepResult",
    "TrialVerdict",
    "agent_coupled_measurements",
    "build_components",
    "control",
    "coupled_measurements",
    "distance",
    "emit_plot",
    "estimate_position",
    "formation_control",
    "formation_error",
    "formation_trace",
    "ideal_control",
    "kabsch_align",
    "loop_is_stable",
    "lyapunov",
    "make_pairs",
    "measure_all",
    "measurement_matrix",
    "noise_experiment",
    "offset_experiment_formation",
    "predicted_equilibrium",
    "recover_position",
    "rotation2d",
    "rotation_is_stable",
    "rotation_sweep_formation",
    "rotation_sweep_homing",
    "run_trial",
    "step_formation",
    "step_homing",
    "transform_anchors",
]
