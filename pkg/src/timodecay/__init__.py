"""Modal simulation and decay diagnostics for a delayed thermo-viscoelastic Timoshenko beam."""

from __future__ import annotations

from importlib.metadata import PackageNotFoundError, version

from .coefficients import (
    Coefficients,
    build_theorem_coeffs,
    dissipation_weights,
    exploratory_coeffs,
    m0,
    select_xi,
)
from .discretization import (
    DelayField,
    GalerkinSystem,
    HistoryTrace,
    InitialData,
    ModalState,
    advect_z,
    delay_value,
    project_initial,
    solve_w,
)
from .functionals import (
    DecayFit,
    FunctionalTrace,
    LyapunovConstants,
    energy,
    energy_rate_residual,
    dissipation_bound_slack,
    equivalence_estimate,
    evaluate_trace,
    fit_decay,
    lyapunov_components,
    lyapunov_L,
    select_constants,
)
from .integrator import RunTrace, SimConfig, run, step
from .kernels import (
    RelaxationKernel,
    ScalarHistory,
    check_hypotheses,
    circle,
    convolve,
    diamond,
    exponential_kernel,
    product_identity_residual,
    cauchy_schwarz_slack,
    lemma21_residual,
    lemma22_check,
    power_kernel,
    tabulated_kernel,
)

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = [
    "Coefficients", "build_theorem_coeffs", "dissipation_weights", "exploratory_coeffs", "m0", "select_xi",
    "DelayField", "GalerkinSystem", "HistoryTrace", "InitialData", "ModalState", "advect_z", "delay_value",
    "project_initial", "solve_w",
    "DecayFit", "FunctionalTrace", "LyapunovConstants", "energy", "energy_rate_residual",
    "dissipation_bound_slack", "equivalence_estimate", "evaluate_trace", "fit_decay",
    "lyapunov_components", "lyapunov_L", "select_constants",
    "RunTrace", "SimConfig", "run", "step",
    "RelaxationKernel", "ScalarHistory", "check_hypotheses", "circle", "convolve", "diamond",
    "exponential_kernel", "product_identity_residual", "cauchy_schwarz_slack", "lemma21_residual",
    "lemma22_check", "power_kernel", "tabulated_kernel",
    "__version__",
]
