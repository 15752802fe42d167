import os

import numpy as np
import pytest

from sdeweak.model import SdeModel
from sdeweak.presets import preset


@pytest.fixture(scope="session")
def bench_cache_dir(tmp_path_factory):
    """Benchmark cache shared across the whole run.

    Point SDEWEAK_TEST_CACHE at a persistent directory to skip recomputing
    the desk-scale benchmarks between sessions.
    """
    env = os.environ.get("SDEWEAK_TEST_CACHE")
    if env:
        os.makedirs(env, exist_ok=True)
        return env
    return str(tmp_path_factory.mktemp("benchcache"))


@pytest.fixture
def gbm():
    return preset("gbm")


@pytest.fixture
def bs_asian():
    return preset("bs-asian")


@pytest.fixture
def heston():
    return preset("heston-asian")


@pytest.fixture
def small_diffusion():
    return preset("small-diffusion")


def constant_diffusion_model(drift_matrix=None, columns=((0.3, 0.1), (0.0, 0.2))):
    """2-d model with constant diffusion columns and linear (or zero) drift."""
    a = np.zeros((2, 2)) if drift_matrix is None else np.asarray(drift_matrix, float)
    cols = tuple(np.asarray(c, float) for c in columns)

    def drift(x):
        return x @ a.T

    def make_col(c):
        return lambda x: np.broadcast_to(c, x.shape[:-1] + (2,)).copy()

    zero_jac = lambda x: np.zeros(x.shape[:-1] + (2, 2))
    zero_hess = lambda x: np.zeros(x.shape[:-1] + (2, 2, 2))
    return SdeModel(
        state_dim=2,
        noise_dim=len(cols),
        drift=drift,
        diffusion=tuple(make_col(c) for c in cols),
        drift_jacobian=lambda x: np.broadcast_to(a, x.shape[:-1] + (2, 2)).copy(),
        diffusion_jacobians=tuple(zero_jac for _ in cols),
        drift_hessian=zero_hess,
        diffusion_hessians=tuple(zero_hess for _ in cols),
        label="constant-diffusion",
    )
