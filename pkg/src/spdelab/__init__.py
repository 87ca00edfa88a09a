"""Desk-scale laboratory for jump-diffusion stochastic evolution equations.

Simulates spectral-Galerkin truncations of Hilbert-space evolution equations
driven by Brownian motion and a Poisson random measure, solves the controlled
skeleton equation, evaluates and minimizes the control-cost rate functional,
and validates small-noise asymptotics by seeded Monte Carlo.
"""

from .controls import ControlPair, uniform_grid, zero_control
from .coefficients import (
    ConditionReport,
    DiffusionCoefficient,
    JumpCoefficient,
    MarkMeasure,
    StepFunction,
    check_conditions,
    check_exp_integrability,
    g_norms,
    cost_ball_bounds,
)
from .harness import (
    EventSpec,
    convergence_experiment_a,
    convergence_experiment_b,
    estimate_probability,
    importance_sampling_estimate,
    ldp_slope,
    tightness_report,
    wilson_interval,
)
from .model import Model, demo_initial_state, demo_model, pure_jump_model, scalar_ou_model
from .noise import (
    JumpEvent,
    NoiseBundle,
    load_bundle,
    sample_brownian,
    sample_controlled_prm,
    sample_prm,
    save_bundle,
)
from .rate import (
    CostReport,
    MinimizeOptions,
    RateEstimate,
    TerminalTarget,
    cost_of_control,
    ell,
    in_cost_ball,
    minimize_rate,
)
from .simulate import (
    BlowUpError,
    SdePath,
    girsanov_log_weight,
    noise_bundle,
    simulate_controlled,
    simulate_ensemble,
    simulate_uncontrolled,
    tail_energy,
)
from .skeleton import (
    NonConvergence,
    SkeletonSolution,
    apriori_bound,
    energy_report,
    picard_diagnostics,
    solve_skeleton,
)
from .spectral import (
    EigenSystem,
    SpectralField,
    coercivity_margin,
    fractional_laplacian_system,
    semigroup_apply,
)

__version__ = "0.1.0"
