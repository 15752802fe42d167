"""Weak approximation of multi-dimensional Ito SDEs.

Library surface: coefficient calculus (`model`), one-step maps and path
simulation (`schemes`), Gaussian increment sources (`noise`), preset models
(`presets`), and the estimation engine (`experiments`).  The `sdeweak`
console script ties them into reproducible runs.
"""

from .model import (
    CommutativityReport,
    ContractViolation,
    ScalarField,
    SdeModel,
    apply_L,
    check_derivatives,
    commutativity_check,
    diffusion_quadratic,
    l_sigma,
    lie_bracket,
    milstein_cross_coefficient,
    model_from_functions,
    phi1_coefficient_fields,
    phi2_coefficient_fields,
    phi3_coefficient_tensor,
    stratonovich_drift,
)
from .noise import NoiseBudgetExceeded, NoiseKind, NoiseSource, inverse_normal_cdf
from .presets import PRESET_IDS, PresetModel, preset
from .schemes import (
    SchemeKind,
    SimConfig,
    one_step,
    parse_scheme,
    simulate_terminal,
    simulate_terminal_batch,
    step_em,
    step_extended_milstein,
    step_truncated_milstein,
)
from .experiments import (
    BenchmarkTable,
    EstimateResult,
    EstimationError,
    NoisePlan,
    OrderFit,
    Payoff,
    PayoffKind,
    SweepResult,
    SweepRow,
    compute_benchmark,
    convergence_order,
    epsilon_study,
    estimate,
    make_payoff,
    read_sweep_csv,
    read_sup_csv,
    strike_sweep,
    write_sweep_csv,
    write_sup_csv,
)

__version__ = "0.1.0"
