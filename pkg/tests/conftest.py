import numpy as np
import pytest
from scipy.spatial import cKDTree

from ebsdcs import (
    IndexingParams,
    PatternParams,
    ProbeGrid,
    SampleMask,
    build_library,
    phantom_maps,
    voronoi_phantom,
)

@pytest.fixture
def grid():
    return ProbeGrid(16, 16)

@pytest.fixture
def rng():
    return np.random.default_rng(1234)

@pytest.fixture(scope='session')
def pattern_params():
    return PatternParams()

@pytest.fixture(scope='session')
def indexing_params():
    return IndexingParams()

@pytest.fixture(scope='session')
def grains():
    return voronoi_phantom(ProbeGrid(32, 32), 4, seed=7)

@pytest.fixture(scope='session')
def reference_maps(grains):
    return phantom_maps(grains, 0.3)

@pytest.fixture(scope='session')
def library(grains, pattern_params, indexing_params):
    return build_library(grains.orientations, pattern_params, indexing_params)

@pytest.fixture
def full_mask(grains):
    return SampleMask.full(grains.grid)

def nearest_fill(map, mask):
    """Fill every unsampled position with the value of its nearest sampled one."""
    rows, cols = map.grid.coords_of(np.arange(map.grid.count))
    points = np.column_stack((rows, cols))
    _, nearest = cKDTree(points[mask.sampled]).query(points)
    return map.with_data(map.data[:, mask.sampled[nearest]])
