import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ddft.energy import potential_field
from ddft.equilibrium import picard_solve
from ddft.grid import build_grid, integrate
from ddft.kernels import KernelSpec
from ddft.particles import ParticleEnsemble, _BinnedForce, _pair_force, histogram, reflect, simulate

ZERO = KernelSpec.zero()
TRAP = KernelSpec.harmonic(2.0, center=0.5)
PAIR = KernelSpec.gaussian(0.2, 0.2)


@given(st.floats(-50, 50), st.sampled_from([1.0, 2.0, 0.3]))
def test_reflect_lands_in_box(x, L):
    y = reflect(np.array([x]), L)[0]
    assert 0 <= y <= L
    if 0 <= x <= L:
        assert y == x


def test_reflect_mirrors():
    np.testing.assert_allclose(reflect(np.array([-0.1, 1.2, 2.3]), 1.0), [0.1, 0.8, 0.3])


def test_free_particles_relax_to_uniform():
    snaps = simulate(2000, 4e-4, 5000, ZERO, ZERO, seed=3, thin=5000, x0=np.full(2000, 0.2))
    x = snaps[-1].positions[:, 0]
    counts = np.histogram(x, bins=20, range=(0, 1))[0]
    assert stats.chisquare(counts).pvalue > 1e-3
    sigma = np.sqrt(2000 * 0.05 * 0.95)
    assert np.all(np.abs(counts - 100) <= 3 * sigma + 1)


def test_trap_matches_gibbs_density():
    g = build_grid(1.0, 32)
    snaps = simulate(2000, 1e-4, 20000, TRAP, ZERO, seed=5, thin=100, burn_in=2000)
    gibbs = np.exp(-potential_field(g, TRAP))
    gibbs /= integrate(g, gibbs)
    assert integrate(g, np.abs(histogram(snaps, g) - gibbs)) <= 0.05


def test_interacting_matches_fixed_point():
    g = build_grid(1.0, 32)
    snaps = simulate(3000, 1e-4, 20000, TRAP, PAIR, seed=9, thin=100, burn_in=2000, pair_method="binned")
    ref = picard_solve(g, TRAP, PAIR).rho0
    assert integrate(g, np.abs(histogram(snaps, g) - ref)) <= 0.05


@pytest.mark.parametrize("d", [1, 2])
def test_binned_force_close_to_exact(d):
    x = np.random.default_rng(0).uniform(0, 1, size=(800, d))
    exact = _pair_force(PAIR, x)
    binned = _BinnedForce(PAIR, 1.0, d, 512 if d == 1 else 32)(x)
    # the 2D mesh is much coarser, 32 bins per axis against a kernel width of 0.2
    assert np.max(np.abs(binned - exact)) <= (0.02 if d == 1 else 0.03) * np.max(np.abs(exact))


def test_exact_and_binned_paths_agree():
    # identical seeds give identical noise, so the runs differ only through the pair force
    a = simulate(400, 1e-4, 200, TRAP, PAIR, seed=4, thin=200, pair_method="exact")
    b = simulate(400, 1e-4, 200, TRAP, PAIR, seed=4, thin=200, pair_method="binned")
    assert 0 < np.max(np.abs(a[-1].positions - b[-1].positions)) <= 1e-5


def test_determinism_and_seed_dependence():
    a = simulate(200, 1e-3, 50, TRAP, PAIR, seed=1, thin=10)
    b = simulate(200, 1e-3, 50, TRAP, PAIR, seed=1, thin=10)
    c = simulate(200, 1e-3, 50, TRAP, PAIR, seed=2, thin=10)
    assert len(a) == 6
    for s, t in zip(a, b):
        np.testing.assert_array_equal(s.positions, t.positions)
    assert not np.array_equal(a[-1].positions, c[-1].positions)
    assert [s.step for s in a] == [0, 10, 20, 30, 40, 50]
    assert all(s.rng_seed == 1 and s.N == 200 for s in a)


def test_two_dimensional_particles_stay_inside():
    snaps = simulate(300, 1e-3, 100, KernelSpec.harmonic(1.0, center=0.5), KernelSpec.soft_core(0.1, 0.2), seed=0, thin=50, d=2, L=2.0)
    for s in snaps:
        assert s.positions.shape == (300, 2)
        assert np.all((s.positions >= 0) & (s.positions <= 2.0))


@pytest.mark.parametrize(
    "kwargs",
    [dict(N=50), dict(dt=0.0), dict(steps=-1), dict(thin=0), dict(d=3), dict(L=0.0), dict(pair_method="fmm"), dict(burn_in=-1)],
)
def test_simulate_validation(kwargs):
    args = dict(N=100, dt=1e-3, steps=10, V1=TRAP, V2=ZERO, seed=0) | kwargs
    with pytest.raises(ValueError):
        simulate(**args)


def test_histogram_one_cell():
    g = build_grid(1.0, 8)
    h = histogram(np.full(100, 0.3), g)
    assert h[2] == 8.0 and h.sum() == 8.0
    g2 = build_grid(2.0, 4, 2)
    h2 = histogram(np.tile([1.9, 0.1], (10, 1)), g2)
    assert h2[3, 0] == 1 / g2.cell_volume


def test_histogram_normalized_and_uniform():
    g = build_grid(1.0, 16)
    x = np.random.default_rng(1).uniform(0, 1, 160_000)
    h = histogram(x, g)
    assert integrate(g, h) == pytest.approx(1.0, abs=1e-14)
    # each cell holds about 10^4 samples, so 5 sigma is 5%
    np.testing.assert_allclose(h, 1.0, atol=0.05)


def test_histogram_inputs():
    g = build_grid(1.0, 4)
    ens = ParticleEnsemble(np.array([[0.1], [0.9], [1.0], [0.0]]), 0)
    np.testing.assert_array_equal(histogram(ens, g), [2.0, 0.0, 0.0, 2.0])
    np.testing.assert_array_equal(histogram([ens, ens], g), [2.0, 0.0, 0.0, 2.0])
    with pytest.raises(ValueError):
        histogram(np.array([1.5]), g)
    with pytest.raises(ValueError):
        histogram(np.array([]), g)
