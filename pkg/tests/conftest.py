import numpy as np
import pytest

from gmdiff import PackingConfig, PackingResult, linear_schedule, pack_sphere


@pytest.fixture(scope="session")
def pack_k6():
    """Sphere packing used by most codec/diffusion tests (K=6, d=6)."""
    return pack_sphere(PackingConfig(num_categories=6, latent_dim=6, rng_seed=3))


@pytest.fixture(scope="session")
def pack_k2_d1():
    """Hand-built K=2, d=1 packing: means +1/-1, sigma 1/3."""
    return PackingResult(
        means=np.array([[1.0], [-1.0]]),
        min_pair_sq_dist=4.0,
        sigma=1.0 / 3.0,
        seed=0,
    )


@pytest.fixture(scope="session")
def sched_t10():
    return linear_schedule(10)


@pytest.fixture(scope="session")
def sched_t2():
    return linear_schedule(2, 0.1, 0.2)
