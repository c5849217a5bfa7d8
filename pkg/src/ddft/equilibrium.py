"""Stationary states, the Poincare constant and the decay-rate estimate.

Stationary densities solve the self-consistency equation

    rho = exp(-(V1 + V2 * rho)) / Z[rho],

found by damped Picard iteration. They do not depend on the hydrodynamic
tensors, and the flux vanishes on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import functional_derivative, potential_field
from .errors import MaxIterations, NoConvergence
from .grid import Grid, check_field, convolve_scalar, integrate
from .kernels import KernelSpec, ModelSpecs, grad_sup_norm, sup_norm

SMALL_INTERACTION = 0.25
MIN_DAMPING = 1.0 / 16.0


def picard_map(g: Grid, rho, V1: KernelSpec, V2: KernelSpec) -> np.ndarray:
    """S rho = exp(-(V1 + V2 * rho)) / Z, normalized by quadrature."""
    rho = check_field(g, rho, "rho")
    expo = -(potential_field(g, V1) + convolve_scalar(g, V2, rho))
    w = np.exp(expo - expo.max())
    return w / integrate(g, w)


@dataclass
class EquilibriumResult:
    rho0: np.ndarray
    residual_history: list
    iterations: int
    contraction_flag: bool
    el_residual: float
    chemical_potential: float
    damping: float = 1.0
    contraction_ratio: float = float("nan")
    max_ratio: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "contraction_flag": self.contraction_flag,
            "outside_theory": not self.contraction_flag,
            "el_residual": self.el_residual,
            "chemical_potential": self.chemical_potential,
            "final_damping": self.damping,
            "contraction_ratio": self.contraction_ratio,
            "max_ratio": self.max_ratio,
            "residual_history": [float(r) for r in self.residual_history],
        }


def contraction_ratio(history, window: int = 10) -> tuple[float, float]:
    """Geometric-mean and largest successive ratio over the last ``window`` steps."""
    r = np.asarray([x for x in history if x > 0], dtype=float)
    if r.size < 2:
        return float("nan"), float("nan")
    ratios = r[1:] / r[:-1]
    ratios = ratios[-window:]
    return float(np.exp(np.mean(np.log(ratios)))), float(ratios.max())


def uniform_density(g: Grid) -> np.ndarray:
    return np.full(g.shape, 1.0 / g.volume)


def picard_solve(
    g: Grid,
    V1: KernelSpec,
    V2: KernelSpec,
    rho_init=None,
    damping: float = 1.0,
    tol: float = 1e-12,
    max_iter: int = 500,
) -> EquilibriumResult:
    """Damped Picard iteration rho <- (1 - w) rho + w S rho until ||S rho - rho||_1 <= tol.

    The damping is halved (down to 1/16) whenever the residual grows.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    rho = uniform_density(g) if rho_init is None else check_field(g, rho_init, "rho_init").copy()
    if rho.min() < 0 or abs(integrate(g, rho) - 1.0) > 1e-6:
        raise ValueError("initial guess must be a probability density")
    omega = damping
    history = []
    for it in range(max_iter + 1):
        S = picard_map(g, rho, V1, V2)
        res = integrate(g, np.abs(S - rho))
        if history and res > history[-1] and omega > MIN_DAMPING:
            omega = max(0.5 * omega, MIN_DAMPING)
        history.append(res)
        if res <= tol:
            break
        if it == max_iter:
            raise MaxIterations(f"Picard iteration did not reach tol={tol:g} in {max_iter} iterations", res, history)
        rho = (1.0 - omega) * rho + omega * S
    mu = functional_derivative(g, rho, V1, V2)
    ratio, worst = contraction_ratio(history)
    return EquilibriumResult(
        rho0=rho,
        residual_history=history,
        iterations=len(history) - 1,
        contraction_flag=sup_norm(V2, g.L, g.d) <= SMALL_INTERACTION,
        el_residual=float(np.std(mu)),
        chemical_potential=float(np.mean(mu)),
        damping=omega,
        contraction_ratio=ratio,
        max_ratio=worst,
    )


def stationary_flux_check(g: Grid, rho0, specs: ModelSpecs) -> float:
    """Sup norm of the flux solved at ``rho0``."""
    from .dynamics import compute_flux
    from .operators import assemble_D

    rho0 = check_field(g, rho0, "rho0")
    D = assemble_D(g, specs.Z1, rho0)
    a = compute_flux(g, rho0, D, specs, 0.0)
    return float(np.max(np.abs(a)))


def neumann_laplacian(g: Grid) -> sp.csr_matrix:
    """Finite-volume -Laplacian with zero-flux walls, the stencil used for diffusion."""
    main = np.full(g.N, 2.0)
    main[[0, -1]] = 1.0
    lap1 = sp.diags([-np.ones(g.N - 1), main, -np.ones(g.N - 1)], [-1, 0, 1]) / g.h**2
    if g.d == 1:
        return lap1.tocsr()
    eye = sp.identity(g.N)
    return (sp.kron(lap1, eye) + sp.kron(eye, lap1)).tocsr()


def poincare_constant(g: Grid, tol: float = 1e-13, max_iter: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Smallest nonzero Neumann eigenvalue nu1 by shifted inverse iteration, and nu1^{-1/2}."""
    Lap = neumann_laplacian(g)
    shift = 1e-3 * (math.pi / g.diameter) ** 2
    lu = spla.splu((Lap + shift * sp.identity(g.n_cells)).tocsc())
    x = np.random.default_rng(seed).standard_normal(g.n_cells)
    nu_old = np.inf
    for _ in range(max_iter):
        x -= x.mean()
        x /= np.linalg.norm(x)
        nu = float(x @ (Lap @ x))
        if abs(nu - nu_old) <= tol * abs(nu):
            return nu, nu**-0.5
        nu_old = nu
        x = lu.solve(x)
    raise NoConvergence(f"inverse iteration stagnated at nu={nu:.12g}", abs(nu - nu_old))


@dataclass(frozen=True)
class RateNorms:
    """Constants entering the decay exponent."""

    c_pw: float
    grad_v1: float = 0.0
    grad_v2: float = 0.0
    v2: float = 0.0
    z2: float = 0.0
    nu1: float = float("nan")

    @classmethod
    def from_specs(cls, g: Grid, specs: ModelSpecs, c_pw: float | None = None):
        nu1 = float("nan")
        if c_pw is None:
            nu1, c_pw = poincare_constant(g)
        return cls(
            c_pw=c_pw,
            grad_v1=grad_sup_norm(specs.V1, g.L, g.d, box="domain"),
            grad_v2=grad_sup_norm(specs.V2, g.L, g.d),
            v2=sup_norm(specs.V2, g.L, g.d),
            z2=sup_norm(specs.Z2, g.L, g.d),
            nu1=nu1,
        )

    def exponents(self, mu_min_int, mu_max_int, flux_sq_int):
        """(r_t, r_t_conservative) from the time integrals of mu_min, mu_max and ||a||_{L1}^2."""
        base = np.asarray(mu_min_int) / self.c_pw**2
        hi = np.asarray(mu_max_int)
        z_term = hi * self.z2**2 * np.asarray(flux_sq_int)
        r = base - 2 * hi * (self.grad_v1**2 + (math.e + 1) * self.grad_v2**2) - z_term
        r_cons = base - 2 * hi * (self.grad_v1**2 + (math.exp(4 * self.v2) + 1) * self.grad_v2**2) - z_term
        return r, r_cons


def _cumtrapz(y, t):
    out = np.zeros_like(t)
    if len(t) > 1:
        out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


@dataclass
class RateReport:
    c_pw: float
    nu1: float
    mu_hat_min: float
    mu_hat_max: float
    r_t: float
    r_t_conservative: float
    positive: bool
    times: np.ndarray = field(repr=False)
    r_t_series: np.ndarray = field(repr=False)
    r_t_conservative_series: np.ndarray = field(repr=False)

    @property
    def gate_series(self) -> np.ndarray:
        """The smaller of the two exponents at each time; this one gates envelope checks."""
        return np.minimum(self.r_t_series, self.r_t_conservative_series)

    def to_dict(self) -> dict:
        return {
            "c_pw": self.c_pw,
            "nu1": self.nu1,
            "mu_hat_min": self.mu_hat_min,
            "mu_hat_max": self.mu_hat_max,
            "r_t": self.r_t,
            "r_t_conservative": self.r_t_conservative,
            "positive": self.positive,
        }


def rate_estimate(traj, norms: RateNorms, c_pw: float | None = None) -> RateReport:
    """Decay exponent along a recorded trajectory (trapezoid rule in time)."""
    if c_pw is not None:
        norms = RateNorms(c_pw, norms.grad_v1, norms.grad_v2, norms.v2, norms.z2, c_pw**-2.0)
    t = np.asarray(traj.column("t"), dtype=float)
    if t.size < 2:
        raise ValueError("rate estimate needs at least two snapshots")
    mu_min_int = _cumtrapz(np.asarray(traj.column("mu_min")), t - t[0])
    mu_max_int = _cumtrapz(np.asarray(traj.column("mu_max")), t - t[0])
    flux_int = _cumtrapz(np.asarray(traj.column("flux_l1_norm")) ** 2, t - t[0])
    r, r_cons = norms.exponents(mu_min_int, mu_max_int, flux_int)
    gate = np.minimum(r, r_cons)
    nu1 = norms.nu1 if np.isfinite(norms.nu1) else norms.c_pw**-2.0
    return RateReport(
        c_pw=norms.c_pw,
        nu1=nu1,
        mu_hat_min=float(mu_min_int[-1]),
        mu_hat_max=float(mu_max_int[-1]),
        r_t=float(r[-1]),
        r_t_conservative=float(r_cons[-1]),
        positive=bool(np.all(gate[1:] > 0)),
        times=t,
        r_t_series=r,
        r_t_conservative_series=r_cons,
    )
