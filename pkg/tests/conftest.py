import numpy as np
import pytest

from flowmix.grids import TimeGrid, uniform_grid

from helpers import orthonormalize


@pytest.fixture
def day_grid():
    """Default recording grid: 96 quarter-hour bins ending at 24:00."""
    return uniform_grid()


@pytest.fixture
def closed_grid():
    """97-point uniform grid including both endpoints of [0, 24]."""
    return TimeGrid(np.linspace(0.0, 24.0, 97))


@pytest.fixture
def ortho_basis(day_grid):
    """Three quadrature-orthonormal smooth functions on the day grid."""
    t = day_grid.points
    raw = [
        np.ones_like(t),
        np.sin(2 * np.pi * t / 24.0),
        np.cos(2 * np.pi * t / 24.0),
    ]
    return orthonormalize(raw, day_grid.weights)
