import numpy as np
import pytest

from ebsdcs import (
    GrainMap,
    InvalidArgument,
    Pattern,
    PatternParams,
    ProbeGrid,
    SampleMask,
    ShapeMismatch,
    band_geometry,
    boundary_pixels,
    phantom_maps,
    render,
    synth_pattern,
    synth_stack,
    uds_mask,
    voronoi_labels,
    voronoi_phantom,
)

def test_single_grain():
    gm = voronoi_phantom(ProbeGrid(4, 4), 1, seed=0)
    assert gm.n_grains == 1
    assert not gm.labels.any()

def test_each_pixel_its_own_site():
    grid = ProbeGrid(2, 2)
    labels = voronoi_labels(grid, [(0, 0), (0, 1), (1, 0), (1, 1)])
    np.testing.assert_array_equal(labels, [0, 1, 2, 3])

def test_ties_go_to_lower_site():
    grid = ProbeGrid(1, 3)
    # The middle pixel is equidistant from both sites.
    labels = voronoi_labels(grid, [(0, 2), (0, 0)])
    np.testing.assert_array_equal(labels, [1, 0, 0])

def test_labels_match_brute_force():
    grid = ProbeGrid(128, 128)
    rng = np.random.default_rng(3)
    sites = np.column_stack(np.divmod(np.sort(rng.choice(grid.count, size=8, replace=False)), grid.width))
    labels = voronoi_labels(grid, sites)

    rows, cols = np.divmod(np.arange(grid.count), grid.width)
    d2 = (rows[:, None] - sites[None, :, 0]) ** 2 + (cols[:, None] - sites[None, :, 1]) ** 2
    np.testing.assert_array_equal(labels, d2.argmin(axis=1))
    np.testing.assert_array_equal(np.bincount(labels, minlength=8), np.bincount(d2.argmin(axis=1), minlength=8))

def test_phantom_deterministic():
    grid = ProbeGrid(40, 30)
    a = voronoi_phantom(grid, 6, seed=11)
    b = voronoi_phantom(grid, 6, seed=11)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.orientations, b.orientations)
    assert len(np.unique(a.orientations, axis=0)) == 6
    assert a.orientations.min() >= 0.0 and a.orientations.max() <= 1.0

def test_too_many_grains():
    with pytest.raises(InvalidArgument):
        voronoi_phantom(ProbeGrid(2, 2), 5, seed=0)
    with pytest.raises(InvalidArgument):
        voronoi_phantom(ProbeGrid(2, 2), 0, seed=0)

def test_grain_map_validation():
    grid = ProbeGrid(1, 2)
    with pytest.raises(InvalidArgument):
        GrainMap(grid, [0, 1], [[0.1, 0.2, 0.3], [0.1, 0.2, 0.3]])
    with pytest.raises(InvalidArgument):
        GrainMap(grid, [0, 2], [[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]])
    with pytest.raises(ShapeMismatch):
        GrainMap(grid, [0], [[0.1, 0.2, 0.3]])

def test_grain_map_dict():
    gm = voronoi_phantom(ProbeGrid(6, 5), 3, seed=2)
    back = GrainMap.from_dict(gm.to_dict())
    assert back.grid == gm.grid
    np.testing.assert_array_equal(back.labels, gm.labels)
    np.testing.assert_array_equal(back.orientations, gm.orientations)
    with pytest.raises(InvalidArgument):
        GrainMap.from_dict({'height': 6, 'width': 5})

def test_phantom_maps_single_grain():
    gm = voronoi_phantom(ProbeGrid(5, 5), 1, seed=0)
    contrast, ipf = phantom_maps(gm, 0.3)
    np.testing.assert_array_equal(contrast.values, np.ones(25))
    assert np.all(ipf.data == ipf.data[:, :1])

def test_phantom_maps_two_pixels():
    gm = GrainMap(ProbeGrid(2, 1), [0, 1], [[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]])
    contrast, ipf = phantom_maps(gm, 0.2)
    np.testing.assert_array_equal(contrast.values, [0.2, 0.2])
    np.testing.assert_array_equal(ipf.data[:, 1], [0.4, 0.5, 0.6])

def test_boundary_matches_neighbour_scan():
    gm = voronoi_phantom(ProbeGrid(128, 128), 8, seed=5)
    labels = gm.labels.reshape(128, 128)
    expected = 0
    for r in range(128):
        for c in range(128):
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < 128 and 0 <= cc < 128 and labels[rr, cc] != labels[r, c]:
                    expected += 1
                    break
    assert boundary_pixels(gm).sum() == expected

def test_boundary_symmetric():
    gm = voronoi_phantom(ProbeGrid(32, 32), 5, seed=9)
    boundary = boundary_pixels(gm).reshape(32, 32)
    labels = gm.labels.reshape(32, 32)
    # Horizontal neighbours in different grains are both boundary pixels.
    differ = labels[:, 1:] != labels[:, :-1]
    assert np.all(boundary[:, 1:][differ]) and np.all(boundary[:, :-1][differ])

def test_boundary_contrast_range():
    gm = voronoi_phantom(ProbeGrid(4, 4), 2, seed=0)
    with pytest.raises(InvalidArgument):
        phantom_maps(gm, 1.5)

def test_pattern_without_bands_is_flat():
    p = synth_pattern((0.3, 0.6, 0.9), 48, 64, 4, 3.0, 0.0)
    np.testing.assert_array_equal(p.intensities, np.ones(48 * 64))

def test_pattern_deterministic():
    a = synth_pattern((0.3, 0.6, 0.9), 48, 64, 4, 3.0, 1.0)
    b = synth_pattern((0.3, 0.6, 0.9), 48, 64, 4, 3.0, 1.0)
    assert a == b
    assert set(np.unique(a.intensities)) <= {1.0, 2.0}
    assert (a.intensities == 2.0).any()

def test_distinct_orientations_differ(grains, pattern_params):
    patterns = [render(o, pattern_params) for o in grains.orientations]
    for i in range(len(patterns)):
        for j in range(i + 1, len(patterns)):
            assert patterns[i] != patterns[j]

def test_band_geometry_on_lattice():
    bands = band_geometry((0.2, 0.7, 0.4), 48, 64, 4, 0.4, theta_steps=40, rho_steps=40)
    steps = bands[:, 0] / (np.pi / 40)
    np.testing.assert_allclose(steps, np.round(steps), atol=1e-9)
    assert np.all((bands[:, 0] >= 0) & (bands[:, 0] < np.pi))
    rho_max = 0.5 * np.hypot(48, 64)
    assert np.all(np.abs(bands[:, 1]) < rho_max)

@pytest.mark.parametrize('kwargs', [{'n_bands': 0}, {'band_width': 0.0}, {'amplitude': -1.0}, {'height': 0}])
def test_pattern_params_validation(kwargs):
    with pytest.raises(InvalidArgument):
        PatternParams(**kwargs)

def test_pattern_params_dict():
    params = PatternParams(height=20, width=30, n_bands=5)
    assert PatternParams.from_dict(params.to_dict()).to_dict() == params.to_dict()
    with pytest.raises(InvalidArgument):
        PatternParams.from_dict({'height': 10, 'colour': 'red'})

def test_pattern_validation():
    with pytest.raises(InvalidArgument):
        Pattern(1, 2, [1.0, np.inf])
    with pytest.raises(ShapeMismatch):
        Pattern(2, 2, [1.0, 1.0])

def test_stack_single_grain():
    gm = voronoi_phantom(ProbeGrid(2, 2), 1, seed=0)
    stack = synth_stack(gm, SampleMask.full(gm.grid))
    assert len(stack) == 4
    assert all(p == stack[0] for p in stack)

def test_empty_stack(grains, pattern_params):
    stack = synth_stack(grains, SampleMask(grains.grid, []), pattern_params)
    assert len(stack) == 0
    assert stack.data.shape == (0, pattern_params.height * pattern_params.width)

def test_stack_matches_render(grains, pattern_params):
    mask = uds_mask(grains.grid, 0.3, 1)
    stack = synth_stack(grains, mask, pattern_params)
    assert len(stack) == mask.count
    for index in mask.sampled[::17]:
        expected = render(grains.orientation_at(index), pattern_params).intensities.astype(np.float32)
        np.testing.assert_array_equal(stack.pattern_at(index).intensities, expected)

def test_stack_pattern_at_unsampled(grains):
    mask = SampleMask(grains.grid, [0, 5])
    stack = synth_stack(grains, mask)
    with pytest.raises(KeyError):
        stack.pattern_at(1)

def test_stack_modulation_weakens_boundaries(grains, reference_maps, pattern_params):
    contrast, _ = reference_maps
    stack = synth_stack(grains, SampleMask.full(grains.grid), pattern_params, modulation=contrast)
    boundary = np.flatnonzero(contrast.values < 1.0)[0]
    assert stack.pattern_at(boundary).intensities.max() == pytest.approx(1.3, abs=1e-6)

def test_stack_grid_mismatch(grains):
    with pytest.raises(ShapeMismatch):
        synth_stack(grains, SampleMask.full(ProbeGrid(3, 3)))

def test_full_size_stack_count():
    grid = ProbeGrid(512, 416)
    gm = voronoi_phantom(grid, 8, seed=0)
    stack = synth_stack(gm, uds_mask(grid, 0.10, 0), PatternParams(height=8, width=8, n_bands=2, band_width=1.0))
    assert len(stack) == 21299

def test_stack_is_deterministic(grains, pattern_params):
    mask = uds_mask(grains.grid, 0.5, 2)
    a = synth_stack(grains, mask, pattern_params)
    b = synth_stack(grains, mask, pattern_params)
    np.testing.assert_array_equal(a.data, b.data)
