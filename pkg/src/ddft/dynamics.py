"""Time stepping for the density/flux system with no-flux walls.

The density obeys d(rho)/dt = -div F with face fluxes of Scharfetter-Gummel
(exponentially fitted) type

    F = -(D_face / h) [B(-dPhi) rho_+ - B(dPhi) rho_-],   B(x) = x / (e^x - 1),

where dPhi is the jump of V1 + V2 * rho across the face plus h times the face
average of the hydrodynamic advection Z2 * a. Densities of the form e^{-Phi}
are exact discrete equilibria, and the implicit update matrix is an M-matrix
with zero column sums, so mass and positivity are preserved.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded
from scipy.special import exprel

from .energy import compute_F, potential_field
from .errors import EnergyGuardExhausted, LinearSolveFailure, PositivityLoss
from .grid import Grid, check_field, convolve_gradient, convolve_scalar, gradient_cells, integrate
from .kernels import KernelSpec, ModelSpecs, TensorKernelSpec, eval_gradient
from .operators import apply_A, assemble_D, is_diagonal, solve_flux

log = logging.getLogger(__name__)

SCHEMES = ("semi_implicit_cc", "explicit_heun")
FREEZING = ("synchronized", "lagged")


@dataclass(frozen=True)
class StepControl:
    dt: float = 1e-4
    scheme: str = "semi_implicit_cc"
    inner_picard_tol: float = 1e-10
    inner_picard_max: int = 1
    energy_guard: bool = True
    guard_tol: float = 1e-10
    freezing: str = "synchronized"
    flux_tol: float = 1e-12
    flux_max_iter: int = 200
    min_dt: float = 1e-12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.freezing not in FREEZING:
            raise ValueError(f"unknown freezing {self.freezing!r}; choose from {FREEZING}")
        if not (self.inner_picard_tol > 0 and self.guard_tol > 0 and self.flux_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.inner_picard_max < 1:
            raise ValueError("inner_picard_max must be at least 1")


@dataclass
class SimState:
    time: float
    rho: np.ndarray
    flux: np.ndarray
    D_current: np.ndarray
    step_index: int = 0
    D_previous: np.ndarray | None = None


def _bernoulli(x):
    return 1.0 / exprel(x)


def interaction_potential(g: Grid, rho, V1: KernelSpec, V2: KernelSpec, t: float) -> np.ndarray:
    """Phi = V1 + V2 * rho at the cell centres."""
    return potential_field(g, V1, t) + convolve_scalar(g, V2, rho)


def compute_flux(g: Grid, rho, D, specs: ModelSpecs, t: float, ctrl: StepControl | None = None) -> np.ndarray:
    """Cell flux a solving H a = -rho grad(dF/drho).

    On a density with empty cells the equivalent form -(grad rho + rho grad Phi)
    replaces rho grad(log rho + Phi).
    """
    ctrl = ctrl or StepControl()
    rho = check_field(g, rho, "rho")
    phi = interaction_potential(g, rho, specs.V1, specs.V2, t)
    if np.all(rho > 0):
        rhs = -rho[..., None] * gradient_cells(g, np.log(rho) + phi)
    else:
        rhs = -(gradient_cells(g, rho) + rho[..., None] * gradient_cells(g, phi))
    return solve_flux(g, D, specs.Z2, rho, rhs, tol=ctrl.flux_tol, max_iter=ctrl.flux_max_iter)


def init_state(g: Grid, rho0, specs: ModelSpecs, ctrl: StepControl | None = None, t0: float = 0.0) -> SimState:
    rho0 = check_field(g, rho0, "rho0").copy()
    D = assemble_D(g, specs.Z1, rho0)
    return SimState(t0, rho0, compute_flux(g, rho0, D, specs, t0, ctrl), D, 0, None)


def assemble_drift(g: Grid, state: SimState, V1: KernelSpec, V2: KernelSpec, Z2: TensorKernelSpec) -> np.ndarray:
    """w = grad V1 + (grad V2) * rho + Z2 * a at the cell centres."""
    w = eval_gradient(V1, g.points, state.time).reshape(g.shape + (g.d,))
    w = w + convolve_gradient(g, V2, state.rho)
    return w + apply_A(g, Z2, state.flux)


def _face_coefficients(g: Grid, D, phi, A):
    """Per axis: (lo index, hi index, c_minus, c_plus) with F = c_minus rho_lo - c_plus rho_hi."""
    idx = np.arange(g.n_cells).reshape(g.shape)
    out = []
    for k in range(g.d):
        lo = [slice(None)] * g.d
        hi = [slice(None)] * g.d
        lo[k] = slice(0, g.N - 1)
        hi[k] = slice(1, g.N)
        lo, hi = tuple(lo), tuple(hi)
        Dkk = D[..., k, k]
        Dface = 0.5 * (Dkk[lo] + Dkk[hi])
        dphi = phi[hi] - phi[lo] + 0.5 * g.h * (A[..., k][lo] + A[..., k][hi])
        cm = Dface / g.h * _bernoulli(dphi)
        cp = Dface / g.h * _bernoulli(-dphi)
        out.append((idx[lo].ravel(), idx[hi].ravel(), cm.ravel(), cp.ravel()))
    return out


def _faces(g: Grid, rho, coeffs) -> tuple[np.ndarray, ...]:
    rho_flat = np.asarray(rho).ravel()
    faces = []
    for k, (lo, hi, cm, cp) in enumerate(coeffs):
        Fk = np.zeros(g.face_shape(k))
        inner = [slice(None)] * g.d
        inner[k] = slice(1, g.N)
        shape = list(g.shape)
        shape[k] -= 1
        Fk[tuple(inner)] = (cm * rho_flat[lo] - cp * rho_flat[hi]).reshape(shape)
        faces.append(Fk)
    return tuple(faces)


def face_fluxes(g: Grid, rho, D, phi, A) -> tuple[np.ndarray, ...]:
    """Scharfetter-Gummel face fluxes with zero boundary faces."""
    return _faces(g, rho, _face_coefficients(g, D, phi, A))


def _divergence_matrix(g: Grid, coeffs):
    """Sparse G with div F = G rho."""
    n = g.n_cells
    rows, cols, vals = [], [], []
    for lo, hi, cm, cp in coeffs:
        c_m, c_p = cm / g.h, cp / g.h
        # row lo gets +F, row hi gets -F
        rows += [lo, lo, hi, hi]
        cols += [lo, hi, lo, hi]
        vals += [c_m, -c_p, -c_m, c_p]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def _implicit_solve(g: Grid, rho_old, coeffs, dt):
    """Solve (I + dt G) rho_new = rho_old in increment form.

    The right-hand side -dt div F(rho_old) telescopes across faces, so round-off
    in the total mass scales with the change per step rather than with rho.
    """
    rhs = -dt * _explicit_divergence(g, rho_old, coeffs).ravel()
    if g.d == 1:
        lo, hi, cm, cp = coeffs[0]
        n = g.N
        ab = np.zeros((3, n))
        c_m, c_p = dt * cm / g.h, dt * cp / g.h
        ab[1] = 1.0
        ab[1, :-1] += c_m
        ab[1, 1:] += c_p
        ab[0, 1:] = -c_p
        ab[2, :-1] = -c_m
        try:
            delta = solve_banded((1, 1), ab, rhs, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise LinearSolveFailure(f"tridiagonal solve failed: {exc}") from exc
    else:
        G = _divergence_matrix(g, coeffs)
        A = (sp.identity(g.n_cells, format="csc") + dt * G).tocsc()
        try:
            delta = spla.spsolve(A, rhs)
        except RuntimeError as exc:
            raise LinearSolveFailure(f"sparse solve failed: {exc}") from exc
    if not np.all(np.isfinite(delta)):
        raise LinearSolveFailure("implicit update produced non-finite values")
    return rho_old + delta.reshape(g.shape)


def _explicit_divergence(g: Grid, rho, coeffs):
    """div F as differences of face fluxes, so the cell values sum to zero up to round-off in F."""
    out = np.zeros(g.shape)
    for k, Fk in enumerate(_faces(g, rho, coeffs)):
        out += np.diff(Fk, axis=k) / g.h
    return out


def _rate_of_change(g: Grid, rho, D, phi, A):
    return -_explicit_divergence(g, rho, _face_coefficients(g, D, phi, A))


def _check_positive(rho, where):
    m = float(rho.min())
    if not m > 0:
        raise PositivityLoss(f"density lost positivity in {where} (min {m:.3e})", m)


def _raw_step(g: Grid, state: SimState, ctrl: StepControl, specs: ModelSpecs, dt: float) -> np.ndarray:
    t_new = state.time + dt
    if g.d > 1 and not is_diagonal(state.D_current):
        raise NotImplementedError("two-dimensional stepping needs a diagonal mobility tensor (isotropic Z1)")
    if ctrl.freezing == "lagged" and state.D_previous is not None:
        D = state.D_previous
    else:
        D = state.D_current

    if ctrl.scheme == "explicit_heun":
        phi0 = interaction_potential(g, state.rho, specs.V1, specs.V2, state.time)
        k1 = _rate_of_change(g, state.rho, D, phi0, apply_A(g, specs.Z2, state.flux))
        mid = state.rho + dt * k1
        _check_positive(mid, "explicit predictor")
        D1 = assemble_D(g, specs.Z1, mid)
        a1 = compute_flux(g, mid, D1, specs, t_new, ctrl)
        phi1 = interaction_potential(g, mid, specs.V1, specs.V2, t_new)
        k2 = _rate_of_change(g, mid, D1, phi1, apply_A(g, specs.Z2, a1))
        rho_new = state.rho + 0.5 * dt * (k1 + k2)
        _check_positive(rho_new, "explicit corrector")
        return rho_new

    rho_it, a_it = state.rho, state.flux
    for m in range(ctrl.inner_picard_max):
        phi = interaction_potential(g, rho_it, specs.V1, specs.V2, t_new)
        coeffs = _face_coefficients(g, D, phi, apply_A(g, specs.Z2, a_it))
        rho_next = _implicit_solve(g, state.rho, coeffs, dt)
        _check_positive(rho_next, "implicit update")
        change = integrate(g, np.abs(rho_next - rho_it))
        rho_it = rho_next
        if m + 1 == ctrl.inner_picard_max or change <= ctrl.inner_picard_tol:
            break
        if ctrl.freezing == "synchronized":
            D = assemble_D(g, specs.Z1, rho_it)
        a_it = compute_flux(g, rho_it, assemble_D(g, specs.Z1, rho_it), specs, t_new, ctrl)
    return rho_it


def _accept(g, state, rho_new, dt, specs, ctrl) -> SimState:
    t_new = state.time + dt
    D_new = assemble_D(g, specs.Z1, rho_new)
    return SimState(t_new, rho_new, compute_flux(g, rho_new, D_new, specs, t_new, ctrl), D_new, state.step_index, state.D_current)


def _guarded(g, state, ctrl, specs, dt, F_old):
    rho_new = _raw_step(g, state, ctrl, specs, dt)
    guard = ctrl.energy_guard and specs.V1.is_static
    if guard:
        F_new = compute_F(g, rho_new, specs.V1, specs.V2, state.time + dt).total
        if F_new - F_old > ctrl.guard_tol * (1.0 + abs(F_old)):
            half = 0.5 * dt
            if half < ctrl.min_dt:
                raise EnergyGuardExhausted(f"free energy still increases at dt={half:.3e}")
            log.debug("energy guard: F rose by %.3e, halving dt to %.3e", F_new - F_old, half)
            mid = _guarded(g, state, ctrl, specs, half, F_old)
            F_mid = compute_F(g, mid.rho, specs.V1, specs.V2, mid.time).total
            return _guarded(g, mid, ctrl, specs, half, F_mid)
    return _accept(g, state, rho_new, dt, specs, ctrl)


def step(g: Grid, state: SimState, ctrl: StepControl, specs: ModelSpecs, dt: float | None = None) -> SimState:
    """Advance one time step of length ``dt`` (default ``ctrl.dt``)."""
    dt = ctrl.dt if dt is None else dt
    F_old = compute_F(g, state.rho, specs.V1, specs.V2, state.time).total if ctrl.energy_guard else 0.0
    new = _guarded(g, state, ctrl, specs, dt, F_old)
    new.step_index = state.step_index + 1
    return new


def normalize_initial(g: Grid, rho0, tol: float = 1e-6) -> np.ndarray:
    """Check a candidate initial density and rescale tiny mass defects to exactly one."""
    rho0 = check_field(g, rho0, "rho0")
    if not np.all(np.isfinite(rho0)):
        raise ValueError("initial density has non-finite values")
    if rho0.min() < 0:
        raise ValueError(f"initial density is negative (min {rho0.min():.3e})")
    mass = integrate(g, rho0)
    if abs(mass - 1.0) > tol:
        raise ValueError(f"initial density has mass {mass:.9g}, expected 1")
    if abs(mass - 1.0) > 1e-14:
        if abs(mass - 1.0) > 1e-12:
            warnings.warn(f"initial density mass {mass:.15g} renormalized to 1", stacklevel=2)
        rho0 = rho0 / mass
    return rho0


def evolve(
    g: Grid,
    rho0,
    ctrl: StepControl,
    specs: ModelSpecs,
    t_end: float,
    record_every: int = 1,
    equilibrium=None,
    rate_norms=None,
    snapshot_every: int | None = None,
    spectral_every: int | None = None,
):
    """Integrate from ``rho0`` to ``t_end`` and return a :class:`TrajectoryRecord`.

    ``equilibrium`` (a density) enables the distance column; ``rate_norms``
    enables the running decay exponent; snapshots and spectral reports are
    stored every ``snapshot_every``/``spectral_every`` steps.
    """
    from .diagnostics import TrajectoryRecord

    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if record_every < 1:
        raise ValueError("record_every must be at least 1")
    rho0 = normalize_initial(g, rho0)
    state = init_state(g, rho0, specs, ctrl)
    traj = TrajectoryRecord(g, specs, equilibrium=equilibrium, rate_norms=rate_norms)
    traj.append(state, snapshot=True, spectral=spectral_every is not None)
    n_steps = max(0, math.ceil(t_end / ctrl.dt - 1e-9))
    for k in range(1, n_steps + 1):
        dt = min(ctrl.dt, t_end - state.time) if k == n_steps else ctrl.dt
        state = step(g, state, ctrl, specs, dt)
        if k % record_every == 0 or k == n_steps:
            traj.append(
                state,
                snapshot=k == n_steps or (snapshot_every is not None and k % snapshot_every == 0),
                spectral=spectral_every is not None and (k % spectral_every == 0 or k == n_steps),
            )
    traj.final_state = state
    return traj


__all__ = [
    "StepControl",
    "SimState",
    "assemble_drift",
    "compute_flux",
    "evolve",
    "face_fluxes",
    "init_state",
    "step",
]
