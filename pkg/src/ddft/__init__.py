"""Overdamped dynamic density functional theory with hydrodynamic interactions.

The package evolves a probability density coupled to a flux through nonlocal
mobility and advection tensors, solves for stationary states, and checks the
structural properties of the dynamics (mass, positivity, free-energy decay,
decay rates) numerically.
"""

from .dynamics import SimState, StepControl, evolve, step
from .energy import EnergyBreakdown, compute_F, dissipation, flux_objective_J, functional_derivative
from .equilibrium import EquilibriumResult, RateReport, picard_map, picard_solve, poincare_constant, rate_estimate
from .errors import ConfigError, DDFTError, NumericalError
from .grid import Grid, build_grid, integrate
from .kernels import KernelSpec, ModelSpecs, TensorKernelSpec
from .operators import SpectralReport, apply_H, assemble_D, solve_flux, spectral_report

__version__ = "0.1.0"
