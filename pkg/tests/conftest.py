import numpy as np
import pytest

from gridloop.plant import GeneratorParams, OperatingRegion, compute_equilibrium


@pytest.fixture(scope="session")
def params():
    return GeneratorParams()


@pytest.fixture(scope="session")
def region():
    return OperatingRegion()


@pytest.fixture(scope="session")
def equilibrium_point(params, region):
    return compute_equilibrium(region.delta_s, params)


def sample_region(rng: np.random.Generator, r, p, n: int, shrink: float = 1.0):
    """Uniform (x, u) samples over the (optionally shrunk) operating box."""
    delta = r.delta_s + shrink * r.delta_max * rng.uniform(-1.0, 1.0, n)
    omega = p.omega_s + shrink * r.omega_max * rng.uniform(-1.0, 1.0, n)
    eq_mid = 0.5 * (r.Eq_min + r.Eq_max)
    eq_half = 0.5 * (r.Eq_max - r.Eq_min)
    eq = eq_mid + shrink * eq_half * rng.uniform(-1.0, 1.0, n)
    u_mid = 0.5 * (r.u_min + r.u_max)
    u_half = 0.5 * (r.u_max - r.u_min)
    u = u_mid + shrink * u_half * rng.uniform(-1.0, 1.0, n)
    return np.stack([delta, omega, eq], axis=-1), u
