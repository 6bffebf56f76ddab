import numpy as np
import pytest

from graspd.hand import load_hand
from graspd.sdf import grid_from_function
from graspd.sim import object_state

R_SPHERE = 0.03


def sphere_fn(r=R_SPHERE):
    return lambda q: np.linalg.norm(q, axis=-1) - r


@pytest.fixture(scope="session")
def sphere_grid():
    # same extent a 1 cm padded bake of the 3 cm sphere would cover
    return grid_from_function(sphere_fn(), [-0.04] * 3, [0.04] * 3, 64)


@pytest.fixture(scope="session")
def sphere_state(sphere_grid):
    return object_state(sphere_grid, 1000.0)


@pytest.fixture(scope="session")
def tripod():
    return load_hand("tripod")


@pytest.fixture(scope="session")
def pinch():
    return load_hand("pinch")
