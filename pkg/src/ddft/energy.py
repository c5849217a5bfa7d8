"""Free energy, its functional derivative, dissipation and the flux functional."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, check_field, check_vector_field, convolve_scalar, gradient_cells, integrate
from .kernels import KernelSpec, TensorKernelSpec, eval_potential
from .operators import apply_H, assemble_D

NEGATIVE_TOL = 1e-13


@dataclass(frozen=True)
class EnergyBreakdown:
    entropy_term: float
    external_term: float
    interaction_term: float

    @property
    def total(self) -> float:
        return self.entropy_term + self.external_term + self.interaction_term


def potential_field(g: Grid, V: KernelSpec, t: float = 0.0) -> np.ndarray:
    """One-body potential sampled at the cell centres."""
    return np.asarray(eval_potential(V, g.points, t), dtype=float).reshape(g.shape)


def _entropy_density(rho):
    r = np.clip(rho, 0.0, None)
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = r[pos] * (np.log(r[pos]) - 1.0)
    return out


def compute_F(g: Grid, rho, V1: KernelSpec, V2: KernelSpec, t: float = 0.0) -> EnergyBreakdown:
    rho = check_field(g, rho, "rho")
    if rho.min() < -NEGATIVE_TOL:
        raise ValueError(f"density is negative (min {rho.min():.3e})")
    ent = integrate(g, _entropy_density(rho))
    ext = integrate(g, rho * potential_field(g, V1, t))
    inter = 0.5 * integrate(g, rho * convolve_scalar(g, V2, rho))
    return EnergyBreakdown(ent, ext, inter)


def functional_derivative(g: Grid, rho, V1: KernelSpec, V2: KernelSpec, t: float = 0.0) -> np.ndarray:
    """log rho + V1 + V2 * rho at the cell centres."""
    rho = check_field(g, rho, "rho")
    if np.any(rho <= 0):
        raise ValueError("functional derivative needs a strictly positive density")
    return np.log(rho) + potential_field(g, V1, t) + convolve_scalar(g, V2, rho)


def dissipation(g: Grid, rho, a, V1: KernelSpec, V2: KernelSpec, t: float = 0.0) -> float:
    """Integral of grad(dF/drho) . a, which is dF/dt along the flow."""
    a = check_vector_field(g, a, "flux")
    grad_mu = gradient_cells(g, functional_derivative(g, rho, V1, V2, t))
    return integrate(g, np.sum(grad_mu * a, axis=-1))


def flux_objective_J(
    g: Grid,
    rho,
    v,
    V1: KernelSpec,
    V2: KernelSpec,
    t: float = 0.0,
    Z1: TensorKernelSpec | None = None,
    Z2: TensorKernelSpec | None = None,
) -> float:
    """J[v] = 1/2 int rho^{-1} v . H v - int v . grad(dF/drho)."""
    rho = check_field(g, rho, "rho")
    v = check_vector_field(g, v)
    Z1 = Z1 or TensorKernelSpec.zero()
    Z2 = Z2 or TensorKernelSpec.zero()
    D = assemble_D(g, Z1, rho)
    Hv = apply_H(g, D, Z2, rho, v)
    grad_mu = gradient_cells(g, functional_derivative(g, rho, V1, V2, t))
    quad = integrate(g, np.sum(v * Hv, axis=-1) / rho)
    return 0.5 * quad - integrate(g, np.sum(v * grad_mu, axis=-1))
