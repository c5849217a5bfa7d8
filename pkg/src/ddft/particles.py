"""Overdamped Langevin particles in a box with reflecting walls.

Each particle follows

    dX = -(grad V1(X) + (1/N) sum_j grad V2(X - X_j)) dt + sqrt(2) dW,

integrated by Euler-Maruyama. The pair force is summed exactly for small
ensembles; large ensembles use a binned mean-field estimate (particle counts on
a fine mesh convolved with grad V2, then linearly interpolated), which has the
same N -> infinity limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .kernels import KernelSpec, eval_gradient

EXACT_PAIR_LIMIT = 500


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    rng_seed: int
    step: int = 0

    @property
    def N(self) -> int:
        return len(self.positions)


def reflect(x, L: float) -> np.ndarray:
    """Fold positions back into [0, L] (mirror walls, any overshoot)."""
    y = np.mod(x, 2 * L)
    return np.where(y > L, 2 * L - y, y)


class _BinnedForce:
    def __init__(self, V2: KernelSpec, L: float, d: int, bins: int):
        self.L, self.d, self.bins = L, d, bins
        self.h = L / bins
        c = (np.arange(bins) + 0.5) * self.h
        if d == 1:
            pts = c[:, None]
        else:
            pts = np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1).reshape(-1, 2)
        self.kernel = np.ascontiguousarray(np.moveaxis(eval_gradient(V2, pts[:, None, :] - pts[None, :, :]), -1, 0))

    def __call__(self, x):
        N = len(x)
        idx = np.minimum((x / self.h).astype(int), self.bins - 1)
        if self.d == 1:
            counts = np.bincount(idx[:, 0], minlength=self.bins)
        else:
            counts = np.bincount(idx[:, 0] * self.bins + idx[:, 1], minlength=self.bins**2)
        field = np.stack([m @ (counts / N) for m in self.kernel], axis=-1)
        out = np.empty_like(x)
        # linear interpolation between bin centres, constant beyond the outer centres
        s = np.clip(x / self.h - 0.5, 0, self.bins - 1)
        i0 = np.minimum(s.astype(int), self.bins - 2)
        f = s - i0
        if self.d == 1:
            G = field[:, 0]
            out[:, 0] = G[i0[:, 0]] * (1 - f[:, 0]) + G[i0[:, 0] + 1] * f[:, 0]
            return out
        grid = field.reshape(self.bins, self.bins, 2)
        for k in range(2):
            G = grid[..., k]
            out[:, k] = (
                G[i0[:, 0], i0[:, 1]] * (1 - f[:, 0]) * (1 - f[:, 1])
                + G[i0[:, 0] + 1, i0[:, 1]] * f[:, 0] * (1 - f[:, 1])
                + G[i0[:, 0], i0[:, 1] + 1] * (1 - f[:, 0]) * f[:, 1]
                + G[i0[:, 0] + 1, i0[:, 1] + 1] * f[:, 0] * f[:, 1]
            )
        return out


def _pair_force(V2: KernelSpec, x):
    return eval_gradient(V2, x[:, None, :] - x[None, :, :]).mean(axis=1)


def simulate(
    N: int,
    dt: float,
    steps: int,
    V1: KernelSpec,
    V2: KernelSpec,
    seed: int,
    thin: int = 1,
    L: float = 1.0,
    d: int = 1,
    x0=None,
    pair_method: str = "auto",
    bins: int = 512,
    burn_in: int = 0,
) -> list[ParticleEnsemble]:
    """Run the particle system and keep every ``thin``-th configuration after ``burn_in`` steps.

    ``pair_method`` is ``"exact"``, ``"binned"`` or ``"auto"`` (exact up to
    500 particles).
    """
    if N < 100:
        raise ValueError("need at least 100 particles")
    if not dt > 0 or steps < 0 or thin < 1 or burn_in < 0:
        raise ValueError("dt must be positive, steps and burn_in nonnegative, thin >= 1")
    if d not in (1, 2) or not L > 0:
        raise ValueError("box must be [0, L]^d with d in {1, 2} and L > 0")
    if pair_method not in ("auto", "exact", "binned"):
        raise ValueError(f"unknown pair method {pair_method!r}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, L, size=(N, d)) if x0 is None else reflect(np.array(x0, dtype=float).reshape(N, d), L)
    interacting = V2.kind not in ("zero", "constant")
    if pair_method == "auto":
        pair_method = "exact" if N <= EXACT_PAIR_LIMIT else "binned"
    binned = _BinnedForce(V2, L, d, bins if d == 1 else min(bins, 32)) if interacting and pair_method == "binned" else None
    noise = np.sqrt(2.0 * dt)
    out = []
    if burn_in == 0:
        out.append(ParticleEnsemble(x.copy(), seed, 0))
    for n in range(1, steps + 1):
        drift = eval_gradient(V1, x, (n - 1) * dt)
        if interacting:
            drift = drift + (binned(x) if binned is not None else _pair_force(V2, x))
        x = reflect(x - drift * dt + noise * rng.standard_normal(x.shape), L)
        if n >= burn_in and n % thin == 0:
            out.append(ParticleEnsemble(x.copy(), seed, n))
    return out


def histogram(samples, g: Grid) -> np.ndarray:
    """Normalized cell histogram; accepts one ensemble, an array, or a list of ensembles."""
    if isinstance(samples, ParticleEnsemble):
        pts = samples.positions
    elif isinstance(samples, (list, tuple)) and samples and isinstance(samples[0], ParticleEnsemble):
        pts = np.concatenate([s.positions for s in samples])
    else:
        pts = np.asarray(samples, dtype=float)
    pts = pts.reshape(-1, g.d)
    if pts.size == 0:
        raise ValueError("no samples")
    if np.any(pts < 0) or np.any(pts > g.L):
        raise ValueError("samples outside the box")
    idx = np.minimum((pts / g.h).astype(int), g.N - 1)
    flat = np.ravel_multi_index(tuple(idx.T), g.shape)
    counts = np.bincount(flat, minlength=g.n_cells).reshape(g.shape)
    return counts / (len(pts) * g.cell_volume)
