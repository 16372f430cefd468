import numpy as np
import pytest

from pfmtl.environments import sample_sphere


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_task(rng, n, d, w=None, noise=0.5):
    """Sphere inputs with noisy linear labels around ``w``."""
    if w is None:
        w = rng.normal(size=d) * 3
    X = sample_sphere(rng, n, d)
    return X, X @ w + noise * rng.standard_normal(n), w
