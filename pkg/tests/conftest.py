import numpy as np
import pytest

from rovernav.terrain import TerrainModel


def make_terrain(elevation, albedo=None, res_m=1.0, rocks=()):
    elevation = np.array(elevation, dtype=float)
    if albedo is None:
        albedo = np.full(elevation.shape + (3,), 0.5)
    return TerrainModel(elevation, np.array(albedo, dtype=float), tuple(rocks), res_m)


def flat_terrain(width=40.0, height=40.0, res_m=0.5, z=0.0, gray=0.5, rocks=()):
    shape = (int(round(height / res_m)) + 1, int(round(width / res_m)) + 1)
    return make_terrain(np.full(shape, z), np.full(shape + (3,), gray), res_m, rocks)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
