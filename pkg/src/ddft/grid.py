"""Cell-centred finite-volume mesh on the box [0, L]^d.

Scalar fields are arrays of shape ``grid.shape``; vector fields carry a trailing
axis of length ``d``; face fluxes are a tuple with one array per axis, where the
array for axis ``k`` has ``N + 1`` entries along ``k`` (the first and last of
which sit on the boundary).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .kernels import KernelSpec, TensorKernelSpec, eval_potential, eval_tensor


@dataclass(frozen=True)
class Grid:
    L: float
    N: int
    d: int = 1

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if int(self.N) != self.N or self.N < 4:
            raise ValueError(f"need at least 4 cells per axis, got {self.N}")
        if not self.L > 0:
            raise ValueError(f"extent must be positive, got {self.L}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def n_cells(self) -> int:
        return self.N**self.d

    @property
    def volume(self) -> float:
        return self.L**self.d

    @property
    def diameter(self) -> float:
        return self.L * np.sqrt(self.d)

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell-centre coordinates along one axis."""
        return (np.arange(self.N) + 0.5) * self.h

    @cached_property
    def points(self) -> np.ndarray:
        """All cell centres, shape ``(*shape, d)``."""
        axes = np.meshgrid(*([self.centers] * self.d), indexing="ij")
        return np.stack(axes, axis=-1)

    @property
    def flat_points(self) -> np.ndarray:
        return self.points.reshape(self.n_cells, self.d)

    @property
    def boundary_faces(self) -> list[tuple[int, int]]:
        """(axis, face index) of every boundary face family: index 0 and N."""
        return [(k, i) for k in range(self.d) for i in (0, self.N)]

    def zero_faces(self) -> tuple[np.ndarray, ...]:
        return tuple(np.zeros(self.face_shape(k)) for k in range(self.d))

    def face_shape(self, axis: int) -> tuple[int, ...]:
        s = list(self.shape)
        s[axis] += 1
        return tuple(s)


def build_grid(L: float, N: int, d: int = 1) -> Grid:
    return Grid(L, N, d)


def check_field(g: Grid, f, name="field") -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != g.shape:
        raise ValueError(f"{name} has shape {f.shape}, grid expects {g.shape}")
    return f


def check_vector_field(g: Grid, v, name="vector field") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != g.shape + (g.d,):
        raise ValueError(f"{name} has shape {v.shape}, grid expects {g.shape + (g.d,)}")
    return v


def integrate(g: Grid, f) -> float:
    f = check_field(g, f)
    return float(f.sum() * g.cell_volume)


def divergence(g: Grid, F) -> np.ndarray:
    """Finite-volume divergence of face fluxes; boundary faces must carry zero."""
    if len(F) != g.d:
        raise ValueError(f"expected {g.d} face arrays, got {len(F)}")
    out = np.zeros(g.shape)
    for k, Fk in enumerate(F):
        Fk = np.asarray(Fk, dtype=float)
        if Fk.shape != g.face_shape(k):
            raise ValueError(f"face array {k} has shape {Fk.shape}, expected {g.face_shape(k)}")
        lo = np.take(Fk, 0, axis=k)
        hi = np.take(Fk, g.N, axis=k)
        if np.any(lo != 0.0) or np.any(hi != 0.0):
            raise ValueError("nonzero flux through the boundary violates the no-flux condition")
        out += np.diff(Fk, axis=k) / g.h
    return out


def gradient_cells(g: Grid, f) -> np.ndarray:
    """Cell-centred gradient, second order everywhere including boundary cells."""
    f = check_field(g, f)
    if g.d == 1:
        return np.gradient(f, g.h, edge_order=2)[:, None]
    return np.stack(np.gradient(f, g.h, edge_order=2), axis=-1)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@lru_cache(maxsize=64)
def displacements(g: Grid) -> np.ndarray:
    """x_i - x_j for all cell pairs, shape ``(n, n, d)``."""
    p = g.flat_points
    return _readonly(p[:, None, :] - p[None, :, :])


@lru_cache(maxsize=64)
def kernel_matrix(g: Grid, K: KernelSpec) -> np.ndarray:
    """Dense quadrature matrix with entries K(x_i - x_j) h^d."""
    return _readonly(eval_potential(K, displacements(g)) * g.cell_volume)


@lru_cache(maxsize=64)
def tensor_kernel_matrix(g: Grid, Z: TensorKernelSpec) -> np.ndarray:
    """Dense block matrix for Z(x_i - x_j) h^d, shape ``(n*d, n*d)`` ordered (cell, component)."""
    n, d = g.n_cells, g.d
    blocks = eval_tensor(Z, displacements(g)) * g.cell_volume  # (n, n, d, d)
    return _readonly(blocks.transpose(0, 2, 1, 3).reshape(n * d, n * d))


def convolve_scalar(g: Grid, K: KernelSpec, f) -> np.ndarray:
    f = check_field(g, f)
    return (kernel_matrix(g, K) @ f.ravel()).reshape(g.shape)


def convolve_tensor(g: Grid, Z: TensorKernelSpec, v) -> np.ndarray:
    v = check_vector_field(g, v)
    return (tensor_kernel_matrix(g, Z) @ v.ravel()).reshape(v.shape)


@lru_cache(maxsize=64)
def gradient_kernel_matrices(g: Grid, K: KernelSpec) -> np.ndarray:
    """Matrices for (grad K) convolved with a density, shape ``(d, n, n)``."""
    from .kernels import eval_gradient

    grad = eval_gradient(K, displacements(g)) * g.cell_volume  # (n, n, d)
    return _readonly(np.ascontiguousarray(np.moveaxis(grad, -1, 0)))


def convolve_gradient(g: Grid, K: KernelSpec, f) -> np.ndarray:
    """(grad K) * f at cell centres, as a vector field."""
    f = check_field(g, f).ravel()
    mats = gradient_kernel_matrices(g, K)
    return np.stack([m @ f for m in mats], axis=-1).reshape(g.shape + (g.d,))
