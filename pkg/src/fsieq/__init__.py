"""Steady fluid-structure equilibrium solver on truncated exterior domains.

A rigid body held by a linear spring and a torsional spring sits in a
uniform stream. The package computes the steady perturbation velocity,
pressure, torsional angle and spring displacement on a staggered grid,
and ships the measurement suite for the small-Reynolds bounds that make
the fixed-point iteration well behaved.
"""

__version__ = "0.1.0"

from .params import (
    Params,
    far_field_direction,
    reynolds_from_physical,
    rotation_matrix,
    rotated_stiffness,
    smallness_coefficients,
    stiffness_bounds,
)
from .grid import (
    Box,
    CellMask,
    Grid,
    Sphere,
    VectorField,
    build_grid,
    read_field_dump,
    voxelize_body,
    write_field_dump,
)
from .lifting import (
    LiftingConfig,
    build_lifting,
    calibrate_leray_eps,
    forcing_f_lambda,
    leray_lifting,
    lifting_violations,
    simple_lifting,
    torque_test_field,
)
from .oseen import (
    LinearSolveOptions,
    NonConvergence,
    SolveReport,
    assemble_residual,
    solve_oseen,
)
from .equilibrium import (
    EquilibriumState,
    PicardFailure,
    PicardOptions,
    body_surface_force,
    boundary_torque_direct,
    control_box_force,
    physical_velocity,
    picard_step,
    recover_delta,
    solve_equilibrium,
    torque_functional,
)
from .invading import SweepPlan, SweepReport, extend_by_zero, plan_violations, run_invading
from .analysis import (
    BoundFitReport,
    ContractionReport,
    DispersionReport,
    NormSpec,
    StateRecord,
    contraction_profile,
    contraction_rate,
    contraction_ratios,
    field_norm,
    random_divergence_free,
    shell_decay_profile,
    threshold_bisect,
    uniqueness_experiment,
    verify_affine_bounds,
)
from .config import ConfigError, RunConfig, load_config, validate_config
from .scenarios import run_config

__all__ = [
    "Params",
    "far_field_direction",
    "reynolds_from_physical",
    "rotation_matrix",
    "rotated_stiffness",
    "smallness_coefficients",
    "stiffness_bounds",
    "Box",
    "CellMask",
    "Grid",
    "Sphere",
    "VectorField",
    "build_grid",
    "read_field_dump",
    "voxelize_body",
    "write_field_dump",
    "LiftingConfig",
    "build_lifting",
    "calibrate_leray_eps",
    "forcing_f_lambda",
    "leray_lifting",
    "lifting_violations",
    "simple_lifting",
    "torque_test_field",
    "LinearSolveOptions",
    "NonConvergence",
    "SolveReport",
    "assemble_residual",
    "solve_oseen",
    "EquilibriumState",
    "PicardFailure",
    "PicardOptions",
    "body_surface_force",
    "boundary_torque_direct",
    "control_box_force",
    "physical_velocity",
    "picard_step",
    "recover_delta",
    "solve_equilibrium",
    "torque_functional",
    "SweepPlan",
    "SweepReport",
    "extend_by_zero",
    "plan_violations",
    "run_invading",
    "BoundFitReport",
    "ContractionReport",
    "DispersionReport",
    "NormSpec",
    "StateRecord",
    "contraction_profile",
    "contraction_rate",
    "contraction_ratios",
    "field_norm",
    "random_divergence_free",
    "shell_decay_profile",
    "threshold_bisect",
    "uniqueness_experiment",
    "verify_affine_bounds",
    "ConfigError",
    "RunConfig",
    "load_config",
    "validate_config",
    "run_config",
    "__version__",
]
