import numpy as np
import pytest
from hypothesis import settings

from ddft.grid import build_grid, integrate
from ddft.kernels import KernelSpec, ModelSpecs, TensorKernelSpec

settings.register_profile("ddft", max_examples=40, deadline=None)
settings.load_profile("ddft")


def random_density(g, rng, modes=6, strength=0.5):
    """Smooth positive density with unit mass built from a few cosine modes."""
    x = g.points / g.L
    f = np.zeros(g.shape)
    for k in range(modes):
        f += rng.normal() / (k + 1) * np.prod(np.cos(np.pi * (k + 1) * x), axis=-1)
    rho = np.exp(strength * f)
    return rho / integrate(g, rho)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def g64():
    return build_grid(1.0, 64)


@pytest.fixture
def trap_specs():
    z = TensorKernelSpec.isotropic(KernelSpec.gaussian(0.3, 0.2))
    return ModelSpecs(KernelSpec.harmonic(2.0, center=0.5), KernelSpec.gaussian(0.2, 0.2), z, z)


@pytest.fixture
def free_specs():
    return ModelSpecs()
