import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_density
from ddft.diagnostics import check_envelope
from ddft.dynamics import StepControl, evolve
from ddft.energy import potential_field
from ddft.equilibrium import (
    RateNorms,
    contraction_ratio,
    picard_map,
    picard_solve,
    poincare_constant,
    rate_estimate,
    stationary_flux_check,
)
from ddft.errors import MaxIterations
from ddft.grid import build_grid, integrate
from ddft.kernels import KernelSpec, ModelSpecs, TensorKernelSpec

ZERO = KernelSpec.zero()
TRAP = KernelSpec.harmonic(2.0, center=0.5)
PAIR = KernelSpec.gaussian(0.2, 0.2)
ZG = TensorKernelSpec.isotropic(KernelSpec.gaussian(0.3, 0.2))


def _gibbs(g, V1):
    w = np.exp(-potential_field(g, V1))
    return w / integrate(g, w)


def test_picard_map_without_interaction(g64, rng):
    rho = random_density(g64, rng)
    np.testing.assert_allclose(picard_map(g64, rho, ZERO, ZERO), 1.0, rtol=1e-14)
    np.testing.assert_allclose(picard_map(g64, rho, TRAP, ZERO), _gibbs(g64, TRAP), rtol=1e-14)


def test_picard_map_survives_huge_potentials(g64):
    out = picard_map(g64, np.ones(64), KernelSpec.harmonic(5000.0, center=0.5), ZERO)
    assert np.all(np.isfinite(out))
    assert integrate(g64, out) == pytest.approx(1.0, abs=1e-13)


@given(st.integers(0, 2**32 - 1))
def test_picard_map_lipschitz(seed):
    rng = np.random.default_rng(seed)
    g = build_grid(1.0, 64)
    r1 = random_density(g, rng, strength=2.0)
    r2 = random_density(g, rng, strength=2.0)
    lhs = integrate(g, np.abs(picard_map(g, r1, TRAP, PAIR) - picard_map(g, r2, TRAP, PAIR)))
    assert lhs <= math.exp(0.5) / 2 * integrate(g, np.abs(r1 - r2))


def test_picard_solve_without_interaction():
    g = build_grid(1.0, 128)
    res = picard_solve(g, TRAP, ZERO)
    assert res.iterations == 1
    assert res.el_residual <= 1e-10
    np.testing.assert_allclose(res.rho0, _gibbs(g, TRAP), rtol=1e-13)
    assert res.contraction_flag


def test_picard_contraction_and_fixed_point():
    g = build_grid(1.0, 128)
    res = picard_solve(g, TRAP, PAIR, tol=1e-12)
    assert res.contraction_ratio <= 0.83
    assert res.max_ratio <= 0.83
    assert res.residual_history[-1] <= 1e-12
    assert integrate(g, np.abs(picard_map(g, res.rho0, TRAP, PAIR) - res.rho0)) <= 1e-12
    assert abs(integrate(g, res.rho0) - 1) <= 1e-12
    assert np.all(res.rho0 > 0)
    assert res.el_residual <= 1e-6 * (1 + abs(res.chemical_potential))


def test_picard_uniqueness_from_random_starts(rng):
    g = build_grid(1.0, 128)
    ref = picard_solve(g, TRAP, PAIR).rho0
    for _ in range(5):
        start = random_density(g, rng, strength=3.0)
        out = picard_solve(g, TRAP, PAIR, rho_init=start).rho0
        assert integrate(g, np.abs(out - ref)) <= 1e-8


def test_picard_max_iterations_keeps_history():
    g = build_grid(1.0, 64)
    with pytest.raises(MaxIterations) as info:
        picard_solve(g, TRAP, PAIR, tol=1e-15, max_iter=1)
    assert len(info.value.history) == 2


def test_picard_damping_halves_on_growth():
    # a strong pair repulsion makes the undamped map overshoot on its second step
    g = build_grid(1.0, 64)
    res = picard_solve(g, ZERO, KernelSpec.gaussian(10.0, 0.2), max_iter=2000)
    assert res.residual_history[1] > res.residual_history[0]
    assert res.damping == 0.5
    assert not res.contraction_flag
    assert res.residual_history[-1] <= 1e-12


def test_picard_rejects_bad_inputs(g64):
    with pytest.raises(ValueError):
        picard_solve(g64, TRAP, PAIR, damping=0.0)
    with pytest.raises(ValueError):
        picard_solve(g64, TRAP, PAIR, rho_init=np.full(64, 2.0))


def test_contraction_ratio_geometric():
    hist = [0.5**k for k in range(30)]
    ratio, worst = contraction_ratio(hist)
    assert ratio == pytest.approx(0.5)
    assert worst == pytest.approx(0.5)
    assert math.isnan(contraction_ratio([1.0])[0])


def test_stationary_flux_checks():
    g = build_grid(1.0, 128)
    gibbs = _gibbs(g, TRAP)
    assert stationary_flux_check(g, gibbs, ModelSpecs(TRAP, ZERO, ZG, ZG)) <= 1e-10
    specs = ModelSpecs(TRAP, PAIR, ZG, ZG)
    res = picard_solve(g, TRAP, PAIR, tol=1e-12)
    assert stationary_flux_check(g, res.rho0, specs) <= 1e-8
    bumped = res.rho0 * (1 + 0.01 * np.cos(np.pi * g.centers))
    bumped /= integrate(g, bumped)
    assert stationary_flux_check(g, bumped, specs) > 1e-4


@pytest.mark.parametrize("L,expected", [(1.0, math.pi**2), (2.0, (math.pi / 2) ** 2)])
def test_poincare_constant_1d(L, expected):
    g = build_grid(L, 256)
    nu1, c_pw = poincare_constant(g)
    assert nu1 == pytest.approx(expected, rel=1e-3)
    assert c_pw == pytest.approx(nu1**-0.5)
    assert c_pw <= g.diameter / math.pi + 1e-3


def test_poincare_constant_2d():
    g = build_grid(1.0, 48, 2)
    nu1, c_pw = poincare_constant(g)
    assert nu1 == pytest.approx(math.pi**2, rel=2e-3)
    assert c_pw <= g.diameter / math.pi + 1e-3


def test_rate_pure_diffusion_closed_form():
    g = build_grid(1.0, 64)
    rho0 = 1 + 0.1 * np.cos(np.pi * g.centers)
    norms = RateNorms(c_pw=1 / math.pi)
    traj = evolve(g, rho0, StepControl(dt=1e-3), ModelSpecs(), 0.1, equilibrium=np.ones(64), rate_norms=norms)
    rate = rate_estimate(traj, norms)
    t = traj.column("t")
    np.testing.assert_allclose(rate.r_t_series, t * math.pi**2, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(rate.r_t_conservative_series, rate.r_t_series)
    assert rate.positive
    assert rate.mu_hat_min == pytest.approx(0.1)
    np.testing.assert_allclose(traj.column("r_t_running"), rate.gate_series, rtol=1e-12, atol=1e-14)
    assert check_envelope(traj, rate).ok


def test_rate_envelope_with_trap():
    g = build_grid(1.0, 128)
    specs = ModelSpecs(TRAP, ZERO)
    eq = _gibbs(g, TRAP)
    rho0 = np.exp(-((g.centers - 0.3) ** 2) / 0.02)
    rho0 /= integrate(g, rho0)
    norms = RateNorms.from_specs(g, specs)
    assert norms.grad_v1 == pytest.approx(1.0, rel=1e-2)
    traj = evolve(g, rho0, StepControl(dt=1e-3), specs, 0.5, equilibrium=eq, rate_norms=norms)
    rate = rate_estimate(traj, norms)
    assert rate.positive
    env = check_envelope(traj, rate)
    assert env.ok and env.violations == []
    assert rate.r_t > rate.r_t_conservative or math.isclose(rate.r_t, rate.r_t_conservative)


def test_rate_gate_fails_with_strong_hi():
    g = build_grid(1.0, 64)
    z2 = TensorKernelSpec.isotropic(KernelSpec.gaussian(10.0, 0.3))
    specs = ModelSpecs(TRAP, PAIR, TensorKernelSpec.zero(), z2)
    rho0 = np.exp(-((g.centers - 0.3) ** 2) / 0.02)
    rho0 /= integrate(g, rho0)
    norms = RateNorms.from_specs(g, specs)
    traj = evolve(g, rho0, StepControl(dt=1e-3), specs, 0.05, equilibrium=picard_solve(g, TRAP, PAIR).rho0, rate_norms=norms)
    rate = rate_estimate(traj, norms)
    assert not rate.positive and rate.r_t < 0
    env = check_envelope(traj, rate)
    assert env.ok and env.notice


@pytest.mark.parametrize("v2", [0.2, 0.25, 0.3])
def test_exponent_variants(v2):
    norms = RateNorms(c_pw=1 / math.pi, grad_v1=0.5, grad_v2=0.3, v2=v2, z2=0.1)
    r, r_cons = norms.exponents(1.0, 1.0, 0.5)
    assert r - r_cons == pytest.approx(2 * 0.09 * (math.exp(4 * v2) - math.e))
    # the two constants cross at |V2| = 1/4, so neither variant is uniformly smaller
    assert (r_cons < r) == (v2 > 0.25)


def test_rate_needs_two_rows():
    g = build_grid(1.0, 16)
    traj = evolve(g, np.ones(16), StepControl(), ModelSpecs(), 0.0)
    with pytest.raises(ValueError):
        rate_estimate(traj, RateNorms(c_pw=1 / math.pi))
