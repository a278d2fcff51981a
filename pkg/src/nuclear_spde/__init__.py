"""Hermite-Galerkin simulation of stochastic convolutions and evolution equations
driven by cylindrical martingale-valued measures, with Monte-Carlo property checks."""

__version__ = "0.1.0"

from .convolution import DyadicGrid, convolve_dyadic, convolve_exact  # noqa: E402
from .ensemble import Ensemble  # noqa: E402
from .hermite_space import SpectralBasis, hermite_function, hermite_functions, seminorm  # noqa: E402
from .integral import Integrand, integrate, ito_isometry_report  # noqa: E402
from .noise import LevySpec, WienerSpec, sample_levy, uniform_grid  # noqa: E402
from .semigroup import SpectralSemigroup  # noqa: E402
from .see_solver import affine_coefficients, solve_mild, uniqueness_probe, weak_residual  # noqa: E402

__all__ = [
    "DyadicGrid", "Ensemble", "Integrand", "LevySpec", "SpectralBasis", "SpectralSemigroup",
    "WienerSpec", "affine_coefficients", "convolve_dyadic", "convolve_exact",
    "hermite_function", "hermite_functions", "integrate", "ito_isometry_report",
    "sample_levy", "seminorm", "solve_mild", "uniform_grid", "uniqueness_probe",
    "weak_residual",
]
