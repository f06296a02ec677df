import numpy as np
import pytest

from weakanchor.geometry import GeometrySpec, build_grid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def droplet_grid():
    spec = GeometrySpec("III", r_outer=8.0, degree=2)
    return build_grid(spec, 48, 96)
