"""Mobility tensor, hydrodynamic advection and the flux operator H.

For a density ``phi`` the operator acting on cell-centred vector fields is

    H v = D^{-1} v + phi (Z2 * v),    D = (I + Z1 * phi)^{-1}.

Tensor fields are arrays of shape ``(*grid.shape, d, d)``. Dense matrices act
on flattened vector fields ordered (cell, component).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import LinearSolveFailure, NoConvergence, NotPositiveDefinite, SingularTensor
from .grid import Grid, check_field, check_vector_field, kernel_matrix, tensor_kernel_matrix
from .kernels import TensorKernelSpec, sup_norm


def tensor_convolve_density(g: Grid, Z: TensorKernelSpec, phi) -> np.ndarray:
    """(Z * phi)(x_i) = sum_j Z(x_i - x_j) phi_j h^d, one d x d matrix per cell."""
    phi = check_field(g, phi).ravel()
    n, d = g.n_cells, g.d
    if Z.is_zero:
        out = np.zeros((n, d, d))
    elif Z.structure == "isotropic":
        out = (kernel_matrix(g, Z.profile) @ phi)[:, None, None] * np.eye(d)
    else:
        T = tensor_kernel_matrix(g, Z).reshape(n, d, n, d)
        out = np.einsum("iajb,j->iab", T, phi)
    return out.reshape(g.shape + (d, d))


def assemble_D(g: Grid, Z1: TensorKernelSpec, phi) -> np.ndarray:
    """Per-cell mobility tensor (I + Z1 * phi)^{-1}."""
    d = g.d
    M = np.eye(d) + tensor_convolve_density(g, Z1, phi)
    if not np.all(np.isfinite(M)):
        raise SingularTensor("mobility tensor has non-finite entries")
    flat = M.reshape(-1, d, d)
    det = np.linalg.det(flat)
    bad = np.flatnonzero(np.abs(det) < 1e-14)
    if bad.size:
        raise SingularTensor(f"I + Z1*phi is singular at {bad.size} cell(s), first index {bad[0]}")
    lam = np.linalg.eigvalsh(flat)
    bad = np.flatnonzero(lam[:, 0] <= 0)
    if bad.size:
        raise NotPositiveDefinite(
            f"I + Z1*phi is not positive definite at {bad.size} cell(s) "
            f"(smallest eigenvalue {lam[bad[0], 0]:.3e}); the kernel/density pair is inadmissible"
        )
    D = np.linalg.inv(flat)
    D = 0.5 * (D + np.swapaxes(D, -1, -2))
    return D.reshape(M.shape)


def eigen_bounds(Dt) -> tuple[float, float]:
    """Smallest and largest eigenvalue of the tensor field over all cells."""
    Dt = np.asarray(Dt, dtype=float)
    d = Dt.shape[-1]
    flat = Dt.reshape(-1, d, d)
    if d == 1:
        lam = flat[:, 0, 0]
        return float(lam.min()), float(lam.max())
    a, b, c = flat[:, 0, 0], 0.5 * (flat[:, 0, 1] + flat[:, 1, 0]), flat[:, 1, 1]
    mid = 0.5 * (a + c)
    rad = np.sqrt(0.25 * (a - c) ** 2 + b**2)
    return float((mid - rad).min()), float((mid + rad).max())


def is_diagonal(Dt) -> bool:
    Dt = np.asarray(Dt)
    d = Dt.shape[-1]
    off = Dt * (1 - np.eye(d))
    return bool(np.all(off == 0.0))


def apply_A(g: Grid, Z2: TensorKernelSpec, a) -> np.ndarray:
    """Hydrodynamic advection field Z2 * a."""
    a = check_vector_field(g, a)
    if Z2.is_zero:
        return np.zeros_like(a)
    if Z2.structure == "isotropic":
        K = kernel_matrix(g, Z2.profile)
        return (K @ a.reshape(g.n_cells, g.d)).reshape(a.shape)
    return (tensor_kernel_matrix(g, Z2) @ a.ravel()).reshape(a.shape)


def _apply_tensor(Dt, v) -> np.ndarray:
    return np.einsum("...ab,...b->...a", Dt, v)


def _solve_tensor(Dt, v) -> np.ndarray:
    d = Dt.shape[-1]
    if d == 1:
        return v / Dt[..., 0]
    flat = Dt.reshape(-1, d, d)
    if np.any(np.abs(np.linalg.det(flat)) < 1e-300):
        raise SingularTensor("singular mobility tensor in H")
    return np.linalg.solve(flat, v.reshape(-1, d, 1)).reshape(v.shape)


def apply_H(g: Grid, D, Z2: TensorKernelSpec, phi, v) -> np.ndarray:
    """H v = D^{-1} v + phi (Z2 * v)."""
    phi = check_field(g, phi)
    v = check_vector_field(g, v)
    return _solve_tensor(D, v) + phi[..., None] * apply_A(g, Z2, v)


def dense_H(g: Grid, D, Z2: TensorKernelSpec, phi) -> np.ndarray:
    """Matrix of H on flattened vector fields, shape ``(n*d, n*d)``."""
    n, d = g.n_cells, g.d
    Dflat = np.asarray(D).reshape(n, d, d)
    Dinv = np.linalg.inv(Dflat)
    M = sla.block_diag(*Dinv) if d > 1 else np.diag(Dinv[:, 0, 0])
    if not Z2.is_zero:
        weights = np.repeat(check_field(g, phi).ravel(), d)
        M = M + weights[:, None] * tensor_kernel_matrix(g, Z2)
    return M


@dataclass
class FluxSolveInfo:
    method: str
    iterations: int
    residual: float


def solve_flux(
    g: Grid,
    D,
    Z2: TensorKernelSpec,
    rho,
    rhs,
    tol: float = 1e-12,
    max_iter: int = 200,
    method: str = "auto",
    return_info: bool = False,
):
    """Solve H a = rhs.

    ``method="auto"`` runs the Neumann iteration a <- D (rhs - rho Z2*a) and
    falls back to a dense direct solve if it stagnates or diverges;
    ``"neumann"`` and ``"direct"`` force one path. Convergence means the
    relative residual ||H a - rhs||_2 <= tol ||rhs||_2.
    """
    rho = check_field(g, rho)
    rhs = check_vector_field(g, rhs, "rhs")
    D = np.asarray(D, dtype=float)
    scale = np.linalg.norm(rhs)

    def done(a, how, it, res):
        return (a, FluxSolveInfo(how, it, res)) if return_info else a

    if scale == 0.0:
        return done(np.zeros_like(rhs), "trivial", 0, 0.0)
    if Z2.is_zero:
        a = _apply_tensor(D, rhs)
        return done(a, "trivial", 0, 0.0)

    history = []
    if method in ("auto", "neumann"):
        a = _apply_tensor(D, rhs)
        best = np.inf
        stall = 0
        for it in range(1, max_iter + 1):
            Aa = apply_A(g, Z2, a)
            res = np.linalg.norm(_solve_tensor(D, a) + rho[..., None] * Aa - rhs) / scale
            history.append(res)
            if res <= tol:
                return done(a, "neumann", it, res)
            if not np.isfinite(res):
                break
            # the iteration stagnates at round-off slightly above tol; accept that plateau
            stall = stall + 1 if res > 0.9 * best else 0
            best = min(best, res)
            if stall >= 5:
                break
            a = _apply_tensor(D, rhs - rho[..., None] * Aa)
        if method == "neumann":
            raise NoConvergence(f"Neumann flux iteration stopped at residual {history[-1]:.3e}", history[-1], history)

    M = dense_H(g, D, Z2, rho)
    try:
        a = sla.solve(M, rhs.ravel(), check_finite=True).reshape(rhs.shape)
    except (sla.LinAlgError, ValueError) as exc:
        raise LinearSolveFailure(f"dense flux solve failed: {exc}") from exc
    res = float(np.linalg.norm(M @ a.ravel() - rhs.ravel()) / scale)
    if not res <= max(tol, 1e-10):
        raise NoConvergence(f"flux equation unsolved, residual {res:.3e}", res, history + [res])
    return done(a, "direct", len(history), res)


@dataclass
class SpectralReport:
    mu_min: float
    mu_max: float
    z2_norm: float
    contraction_margin: float
    log_fredholm_det: float
    eigenvalues_H: np.ndarray
    eigenvalues_gamma: np.ndarray
    symmetry_defect: float
    # W^{1/2} diagonal and orthonormal eigenvectors of the symmetrized H
    sqrt_weight: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)

    @property
    def lower_bound_H(self) -> float:
        return 1.0 / self.mu_max - self.z2_norm

    def to_dict(self) -> dict:
        return {
            "mu_min": self.mu_min,
            "mu_max": self.mu_max,
            "z2_norm": self.z2_norm,
            "contraction_margin": self.contraction_margin,
            "log_fredholm_det": self.log_fredholm_det,
            "symmetry_defect": self.symmetry_defect,
            "eigenvalues_H": [float(x) for x in self.eigenvalues_H],
            "eigenvalues_gamma": [float(x) for x in self.eigenvalues_gamma],
        }


def contraction_margin(mu_max: float, z2_norm: float) -> float:
    return 1.0 - mu_max * z2_norm


def _block_sqrt(Dflat):
    lam, U = np.linalg.eigh(Dflat)
    return np.einsum("iab,ib,icb->iac", U, np.sqrt(lam), U)


def spectral_report(g: Grid, D, Z2: TensorKernelSpec, rho) -> SpectralReport:
    """Spectrum of H in the rho^{-1}-weighted inner product and its determinant.

    gamma_k are the eigenvalues of -D rho (Z2 * .), so that
    H = D^{-1} (I - Z_rho) and log det H = sum(-log mu_j) + sum(log(1 - gamma_k)).
    """
    rho = check_field(g, rho)
    if np.any(rho <= 0):
        raise ValueError("spectral report needs a strictly positive density")
    n, d = g.n_cells, g.d
    Dflat = np.asarray(D, dtype=float).reshape(n, d, d)
    mu = np.linalg.eigvalsh(Dflat).ravel()
    mu_min, mu_max = float(mu.min()), float(mu.max())
    z2 = sup_norm(Z2, g.L, g.d)

    M = dense_H(g, D, Z2, rho)
    w = np.repeat(g.cell_volume / rho.ravel(), d)
    WM = w[:, None] * M
    defect = float(np.max(np.abs(WM - WM.T)) / np.max(np.abs(WM)))
    sw = np.sqrt(w)
    S = sw[:, None] * M / sw[None, :]
    S = 0.5 * (S + S.T)
    lam_H, U = np.linalg.eigh(S)

    if Z2.is_zero:
        gamma = np.zeros(n * d)
    else:
        # similarity with P^{1/2}, P = blockdiag(rho_i D_i), makes P T symmetric
        Ph = _block_sqrt(Dflat * rho.ravel()[:, None, None])
        Ph = sla.block_diag(*Ph) if d > 1 else np.diag(Ph[:, 0, 0])
        Ssym = Ph @ tensor_kernel_matrix(g, Z2) @ Ph
        gamma = -np.linalg.eigvalsh(0.5 * (Ssym + Ssym.T))
    with np.errstate(divide="ignore", invalid="ignore"):
        logdet = float(-np.sum(np.log(mu)) + np.sum(np.log(1.0 - gamma)))
    return SpectralReport(
        mu_min=mu_min,
        mu_max=mu_max,
        z2_norm=z2,
        contraction_margin=contraction_margin(mu_max, z2),
        log_fredholm_det=logdet,
        eigenvalues_H=lam_H,
        eigenvalues_gamma=np.sort(gamma),
        symmetry_defect=defect,
        sqrt_weight=sw,
        eigenvectors=U,
    )


def flux_by_eigen_expansion(g: Grid, report: SpectralReport, rho, rhs) -> np.ndarray:
    """a = sum_n lambda_n^{-1} <u_n, rhs>_W u_n over the W-orthonormal eigenpairs of H."""
    rhs = check_vector_field(g, rhs, "rhs")
    lam = report.eigenvalues_H
    if np.any(lam == 0):
        raise ZeroDivisionError("H has a zero eigenvalue")
    sw, U = report.sqrt_weight, report.eigenvectors
    coeff = U.T @ (sw * rhs.ravel())
    return ((U @ (coeff / lam)) / sw).reshape(rhs.shape)
