import csv
import math

import numpy as np
import pytest

from ddft.diagnostics import (
    COLUMNS,
    EnvelopeCheck,
    TrajectoryRecord,
    check_envelope,
    fmt,
    read_field_csv,
    record,
    write_field_csv,
)
from ddft.dynamics import SimState, StepControl, evolve, init_state
from ddft.equilibrium import RateNorms, RateReport, picard_solve, rate_estimate
from ddft.grid import build_grid, integrate
from ddft.kernels import KernelSpec, ModelSpecs, TensorKernelSpec
from ddft.operators import assemble_D

ZG = TensorKernelSpec.isotropic(KernelSpec.gaussian(0.3, 0.2))


def test_columns_in_order():
    assert COLUMNS[:4] == ("t", "mass", "min_rho", "max_rho")
    assert COLUMNS[-1] == "harnack_ratio"
    assert len(COLUMNS) == len(set(COLUMNS)) == 16


def test_record_uniform_state():
    g = build_grid(1.0, 32)
    specs = ModelSpecs()
    row = record(g, init_state(g, np.ones(32), specs), specs)
    assert row["mass"] == 1.0
    assert row["F_total"] == pytest.approx(-1.0)
    assert row["dissipation"] == 0.0
    assert row["harnack_ratio"] == 1.0
    assert math.isnan(row["l2_dist_to_equilibrium"])
    assert row["contraction_margin"] == 1.0


def test_record_equilibrium_state(trap_specs):
    g = build_grid(1.0, 128)
    eq = picard_solve(g, trap_specs.V1, trap_specs.V2).rho0
    row = record(g, init_state(g, eq, trap_specs), trap_specs, eq)
    assert abs(row["dissipation"]) <= 1e-15
    assert row["flux_l1_norm"] <= 1e-8
    assert row["l2_dist_to_equilibrium"] == 0.0


def test_transient_rows(trap_specs):
    g = build_grid(1.0, 128)
    eq = picard_solve(g, trap_specs.V1, trap_specs.V2).rho0
    rho0 = np.exp(-((g.centers - 0.3) ** 2) / 0.02)
    rho0 /= integrate(g, rho0)
    traj = evolve(g, rho0, StepControl(dt=1e-3), trap_specs, 0.2, equilibrium=eq, rate_norms=RateNorms.from_specs(g, trap_specs))
    assert rate_estimate(traj, RateNorms.from_specs(g, trap_specs)).positive
    assert np.all(traj.column("dissipation") < 0)
    assert np.all(np.diff(traj.column("l2_dist_to_equilibrium")) < 0)
    assert np.all(np.abs(traj.column("mass") - 1) <= 1e-12)


def test_rows_reproducible_from_snapshots(tmp_path, trap_specs):
    g = build_grid(1.0, 64)
    rho0 = np.exp(-((g.centers - 0.3) ** 2) / 0.02)
    rho0 /= integrate(g, rho0)
    traj = evolve(g, rho0, StepControl(dt=1e-3), trap_specs, 0.02, snapshot_every=5)
    traj.write_csv(tmp_path / "d.csv")
    paths = traj.write_snapshots(tmp_path / "snaps")
    with open(tmp_path / "d.csv") as fh:
        rows = {float(r["t"]): r for r in csv.DictReader(fh)}
    for p in paths:
        t = float(p.read_text().splitlines()[0].split(",")[1])
        rho = read_field_csv(p, g)
        state = init_state(g, rho, trap_specs, t0=t)
        again = record(g, state, trap_specs)
        for c in ("mass", "min_rho", "max_rho", "F_total", "dissipation", "flux_l1_norm", "mu_min", "mu_max"):
            assert again[c] == pytest.approx(float(rows[t][c]), rel=1e-12, abs=1e-12)


def test_times_must_increase(trap_specs):
    g = build_grid(1.0, 16)
    rec = TrajectoryRecord(g, trap_specs)
    state = init_state(g, np.ones(16), trap_specs)
    rec.append(state)
    with pytest.raises(ValueError):
        rec.append(state)
    with pytest.raises(KeyError):
        rec.column("nope")


def test_fmt_round_trips():
    for x in (0.1, 1 / 3, 1e-300, -2.5e17, math.pi):
        assert float(fmt(x)) == x


def test_field_csv_round_trip(tmp_path):
    g = build_grid(1.0, 5, 2)
    vals = np.random.default_rng(0).random(g.shape)
    write_field_csv(tmp_path / "f.csv", g, vals, header_note=0.25)
    np.testing.assert_array_equal(read_field_csv(tmp_path / "f.csv", g), vals)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "# t,0.25"
    assert lines[1] == "x,y,value"
    with pytest.raises(ValueError):
        read_field_csv(tmp_path / "f.csv", build_grid(1.0, 4, 2))


def test_envelope_diffusion_holds():
    g = build_grid(1.0, 128)
    norms = RateNorms.from_specs(g, ModelSpecs())
    traj = evolve(g, 1 + 0.1 * np.cos(np.pi * g.centers), StepControl(dt=1e-3), ModelSpecs(), 0.3, equilibrium=np.ones(128))
    rate = rate_estimate(traj, norms)
    env = check_envelope(traj, rate)
    assert rate.positive and env.ok


def _synthetic(dist, t, r):
    g = build_grid(1.0, 8)
    traj = TrajectoryRecord(g, ModelSpecs())
    for ti, di in zip(t, dist):
        traj.rows.append({c: 0.0 for c in COLUMNS} | {"t": ti, "l2_dist_to_equilibrium": di})
    rate = RateReport(1.0, 1.0, 0.0, 0.0, r[-1], r[-1], bool(np.all(np.asarray(r)[1:] > 0)), np.array(t), np.array(r), np.array(r))
    return traj, rate


def test_envelope_negative_control():
    t = [0.0, 0.1, 0.2, 0.3]
    r = [0.0, 1.0, 2.0, 3.0]
    dist = [1.0, math.exp(-0.5), math.exp(-0.1), math.exp(-1.6)]
    env = check_envelope(*_synthetic(dist, t, r))
    assert not env.ok
    assert env.violations == [2]


def test_envelope_slack():
    t = [0.0, 1.0]
    r = [0.0, 1.0]
    inside = check_envelope(*_synthetic([1.0, math.sqrt(1.04 * math.exp(-1.0))], t, r))
    outside = check_envelope(*_synthetic([1.0, math.sqrt(1.06 * math.exp(-1.0))], t, r))
    assert inside.ok and not outside.ok


def test_envelope_skipped_without_positive_rate():
    env = check_envelope(*_synthetic([1.0, 5.0], [0.0, 1.0], [0.0, -1.0]))
    assert isinstance(env, EnvelopeCheck)
    assert env.ok and env.violations == [] and "not asserted" in env.notice


def test_envelope_needs_distances(trap_specs):
    g = build_grid(1.0, 32)
    norms = RateNorms(c_pw=1 / math.pi)
    traj = evolve(g, np.ones(32), StepControl(dt=1e-3), ModelSpecs(), 0.005)
    with pytest.raises(ValueError):
        check_envelope(traj, rate_estimate(traj, norms))


def test_spectral_snapshots_recorded(trap_specs):
    g = build_grid(1.0, 32)
    traj = evolve(g, np.ones(32), StepControl(dt=1e-3), trap_specs, 0.004, spectral_every=2)
    assert [t for t, _ in traj.spectral] == pytest.approx([0.0, 0.002, 0.004])
    rep = traj.spectral[-1][1]
    assert rep["symmetry_defect"] <= 1e-12
    assert rep["contraction_margin"] > 0


def test_harnack_ratio_infinite_with_empty_cell():
    g = build_grid(1.0, 8)
    rho = np.ones(8) * 8 / 7
    rho[0] = 0.0
    specs = ModelSpecs()
    state = SimState(0.0, rho, np.zeros((8, 1)), assemble_D(g, ZG, rho))
    assert record(g, state, specs)["harnack_ratio"] == math.inf
