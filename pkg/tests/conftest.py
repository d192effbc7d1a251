import numpy as np
import pytest
from hypothesis import settings

from roughflow.fbm import FbmParams, brownian_path, sample_paths
from roughflow.grid_path import GridPath, TimeGrid
from roughflow.rough_lift import lift_piecewise_linear

settings.register_profile("roughflow", max_examples=40, deadline=None)
settings.load_profile("roughflow")


def ladder(seed, steps, oversample=8, dim=1, horizon=1.0, index=0, alpha=0.45):
    """Nested geometric lifts of one fine Brownian path onto each grid in ``steps``."""
    nf = max(steps) * oversample
    fine = brownian_path(TimeGrid(horizon, nf), seed, index, dim)
    return [lift_piecewise_linear(fine, nf // n, alpha) for n in steps]


@pytest.fixture
def bm_lift():
    """Geometric lift of a 2-d Brownian path, 64 coarse steps, oversample 8."""
    fine = brownian_path(TimeGrid(1.0, 512), 7, dim=2)
    return lift_piecewise_linear(fine, 8)


@pytest.fixture
def bm_lift_1d():
    fine = brownian_path(TimeGrid(1.0, 1024), 3)
    return lift_piecewise_linear(fine, 8)


@pytest.fixture
def fbm_lift():
    path = sample_paths(FbmParams(0.4, 2, TimeGrid(1.0, 32), seed=5, oversample=8), 1)[0]
    return lift_piecewise_linear(path, 8, alpha=0.36)


@pytest.fixture
def random_path():
    rng = np.random.default_rng(11)
    return GridPath(TimeGrid(2.0, 50), np.cumsum(rng.standard_normal((51, 3)), axis=0))
