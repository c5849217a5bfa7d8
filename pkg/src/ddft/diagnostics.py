"""Per-snapshot metrics, trajectory storage and envelope checks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import compute_F, dissipation
from .grid import Grid, integrate
from .kernels import ModelSpecs, sup_norm
from .operators import contraction_margin, eigen_bounds, spectral_report

COLUMNS = (
    "t",
    "mass",
    "min_rho",
    "max_rho",
    "F_total",
    "F_entropy",
    "F_external",
    "F_interaction",
    "dissipation",
    "l2_dist_to_equilibrium",
    "flux_l1_norm",
    "mu_min",
    "mu_max",
    "contraction_margin",
    "r_t_running",
    "harnack_ratio",
)

NAN = float("nan")


def fmt(x) -> str:
    """Round-trippable decimal with 17 significant digits."""
    return format(float(x), ".17g")


def flux_l1(g: Grid, a) -> float:
    return integrate(g, np.sqrt(np.sum(np.asarray(a) ** 2, axis=-1)))


def record(g: Grid, state, specs: ModelSpecs, equilibrium=None) -> dict:
    """One diagnostics row for ``state``; the distance column needs an equilibrium density."""
    rho = state.rho
    F = compute_F(g, rho, specs.V1, specs.V2, state.time)
    diss = dissipation(g, rho, state.flux, specs.V1, specs.V2, state.time) if np.all(rho > 0) else NAN
    mu_min, mu_max = eigen_bounds(state.D_current)
    if equilibrium is not None:
        l2 = math.sqrt(integrate(g, (rho - equilibrium) ** 2))
    else:
        l2 = NAN
    lo = float(rho.min())
    return {
        "t": float(state.time),
        "mass": integrate(g, rho),
        "min_rho": lo,
        "max_rho": float(rho.max()),
        "F_total": F.total,
        "F_entropy": F.entropy_term,
        "F_external": F.external_term,
        "F_interaction": F.interaction_term,
        "dissipation": diss,
        "l2_dist_to_equilibrium": l2,
        "flux_l1_norm": flux_l1(g, state.flux),
        "mu_min": mu_min,
        "mu_max": mu_max,
        "contraction_margin": contraction_margin(mu_max, sup_norm(specs.Z2, g.L, g.d)),
        "r_t_running": NAN,
        "harnack_ratio": float(rho.max()) / lo if lo > 0 else math.inf,
    }


class _RunningRate:
    """Trapezoid accumulation of the integrals entering the decay exponent."""

    def __init__(self, norms):
        self.norms = norms
        self.t = None
        self.acc = np.zeros(3)
        self.last = None

    def update(self, row) -> float:
        vals = np.array([row["mu_min"], row["mu_max"], row["flux_l1_norm"] ** 2])
        if self.t is not None:
            self.acc += 0.5 * (vals + self.last) * (row["t"] - self.t)
        self.t, self.last = row["t"], vals
        r, r_cons = self.norms.exponents(*self.acc)
        return float(min(r, r_cons))


@dataclass
class TrajectoryRecord:
    grid: Grid
    specs: ModelSpecs
    equilibrium: np.ndarray | None = None
    rate_norms: object = None
    rows: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    spectral: list = field(default_factory=list)
    final_state: object = None

    def __post_init__(self):
        self._rate = _RunningRate(self.rate_norms) if self.rate_norms is not None else None

    def append(self, state, snapshot: bool = False, spectral: bool = False) -> dict:
        row = record(self.grid, state, self.specs, self.equilibrium)
        if self.rows and not row["t"] > self.rows[-1]["t"]:
            raise ValueError("trajectory times must increase strictly")
        if self._rate is not None:
            row["r_t_running"] = self._rate.update(row)
        self.rows.append(row)
        if snapshot:
            self.snapshots.append((row["t"], state.rho.copy()))
        if spectral and np.all(state.rho > 0):
            rep = spectral_report(self.grid, state.D_current, self.specs.Z2, state.rho)
            self.spectral.append((row["t"], rep.to_dict()))
        return row

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        if name not in COLUMNS:
            raise KeyError(name)
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow([fmt(r[c]) for c in COLUMNS])

    def write_snapshots(self, directory) -> list:
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for k, (t, rho) in enumerate(self.snapshots):
            p = directory / f"snapshot_{k:05d}.csv"
            write_field_csv(p, self.grid, rho, header_note=t)
            paths.append(p)
        return paths


def write_field_csv(path, g: Grid, values, header_note=None) -> None:
    pts = g.flat_points
    vals = np.asarray(values).ravel()
    names = ["x", "y"][: g.d]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header_note is not None:
            w.writerow(["# t", fmt(header_note)])
        w.writerow(names + ["value"])
        for p, v in zip(pts, vals):
            w.writerow([fmt(c) for c in p] + [fmt(v)])


def read_field_csv(path, g: Grid) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    body = rows[1:] if rows and not _is_number(rows[0][0]) else rows
    vals = np.array([float(r[-1]) for r in body])
    if vals.size != g.n_cells:
        raise ValueError(f"{path}: {vals.size} values for a grid of {g.n_cells} cells")
    return vals.reshape(g.shape)


def _is_number(s) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


@dataclass
class EnvelopeCheck:
    ok: bool
    violations: list
    notice: str = ""


def check_envelope(traj, rate, slack: float = 0.05) -> EnvelopeCheck:
    """Test ||rho(t) - rho_inf||^2 <= (1 + slack) ||rho_0 - rho_inf||^2 exp(-r_t) row by row."""
    if not rate.positive:
        return EnvelopeCheck(True, [], "decay exponent not positive; bound not asserted")
    dist2 = np.asarray(traj.column("l2_dist_to_equilibrium"), dtype=float) ** 2
    if np.any(np.isnan(dist2)):
        raise ValueError("trajectory carries no distance to equilibrium")
    bound = (1.0 + slack) * dist2[0] * np.exp(-np.asarray(rate.gate_series))
    bad = np.flatnonzero(dist2 > bound)
    return EnvelopeCheck(bad.size == 0, [int(i) for i in bad])
