import numpy as np
import pytest
from conftest import nearest_fill

from ebsdcs import (
    BpfaModel,
    BpfaParams,
    DegenerateInput,
    InitScheme,
    InvalidArgument,
    MapKind,
    PatchGeometry,
    PatchSet,
    ProbeGrid,
    RgbMap,
    SampleMask,
    ScalarMap,
    ShapeMismatch,
    apply_mask,
    bpfa_fit,
    extract_patches,
    inpaint,
    normalized_error,
    phantom_maps,
    reconstruct,
    select_patch_shape,
    ssim,
    uds_mask,
    voronoi_phantom,
)

def random_model(rng, geom, K=3, fitted=None):
    u = rng.uniform(size=(geom.n_patches, K)) < 0.6
    return BpfaModel(
        D=rng.normal(size=(geom.patch_len, K)),
        w=rng.normal(size=(geom.n_patches, K)),
        u=u,
        pi=np.full(K, 0.5),
        gamma_d=float(geom.patch_len),
        gamma_w=1.0,
        gamma_n=1.0,
        fitted=fitted,
    )

def brute_force_average(model, geom):
    total = np.zeros((geom.channels, geom.map_h, geom.map_w))
    count = np.zeros((geom.map_h, geom.map_w))
    estimates = model.predict()
    p = 0
    for r in range(geom.rows):
        for c in range(geom.cols):
            patch = estimates[p].reshape(geom.channels, geom.patch_h, geom.patch_w)
            total[:, r:r + geom.patch_h, c:c + geom.patch_w] += patch
            count[r:r + geom.patch_h, c:c + geom.patch_w] += 1
            p += 1
    return (total / count).reshape(geom.channels, -1)

@pytest.mark.parametrize(
    ('rate', 'kind', 'expected'),
    [
        (0.10, MapKind.band_contrast, (10, 10)),
        (0.01, MapKind.ipf, (23, 23)),
        (0.25, MapKind.band_contrast, (6, 6)),
        (0.05, 'ipf', (14, 14)),
        (0.12, 'band_contrast', (10, 10)),
        (1.0, MapKind.ipf, (9, 9)),
        (0.001, MapKind.band_contrast, (27, 27)),
    ],
)
def test_select_patch_shape(rate, kind, expected):
    assert select_patch_shape(rate, kind) == expected

@pytest.mark.parametrize('rate', [0.0, -0.1, 1.5])
def test_select_patch_shape_rejects_rate(rate):
    with pytest.raises(InvalidArgument):
        select_patch_shape(rate, MapKind.ipf)

def test_geometry_counts():
    geom = PatchGeometry(2, 2, 1, 3, 3)
    assert geom.n_patches == 4
    assert geom.patch_len == 4
    rgb = PatchGeometry(10, 13, 3, 128, 100)
    assert rgb.n_patches == 119 * 88
    assert rgb.patch_len == 390

def test_geometry_validation():
    with pytest.raises(ShapeMismatch):
        PatchGeometry(4, 2, 1, 3, 3)
    with pytest.raises(InvalidArgument):
        PatchGeometry(2, 2, 2, 3, 3)
    with pytest.raises(InvalidArgument):
        PatchGeometry(0, 2, 1, 3, 3)

def test_extract_patch_order():
    grid = ProbeGrid(3, 3)
    m = ScalarMap(grid, np.arange(9.0))
    patches = extract_patches(m, SampleMask.full(grid), PatchGeometry(2, 2, 1, 3, 3))
    assert len(patches) == 4
    np.testing.assert_array_equal(patches.values[0], [0, 1, 3, 4])
    np.testing.assert_array_equal(patches.values[3], [4, 5, 7, 8])
    assert patches.observed.all()
    np.testing.assert_array_equal(patches.omega(1), [0, 1, 2, 3])

def test_extract_channel_stacking():
    grid = ProbeGrid(3, 3)
    channels = np.stack([np.arange(9.0), 10 + np.arange(9.0), 20 + np.arange(9.0)]) / 30.0
    patches = extract_patches(RgbMap(grid, channels), SampleMask.full(grid), PatchGeometry(2, 2, 3, 3, 3))
    # entry (c, dy, dx) at (c·H + dy)·W + dx
    expected = np.array([0, 1, 3, 4, 10, 11, 13, 14, 20, 21, 23, 24]) / 30.0
    np.testing.assert_allclose(patches.values[0], expected)

def test_extract_matches_brute_force(rng):
    grid = ProbeGrid(40, 40)
    m = ScalarMap(grid, rng.uniform(size=grid.count))
    mask = uds_mask(grid, 0.3, 11)
    geom = PatchGeometry(10, 10, 1, 40, 40)
    patches = extract_patches(m, mask, geom)
    selected = mask.as_boolean().reshape(40, 40)
    image = m.to_image()
    p = 0
    for r in range(geom.rows):
        for c in range(geom.cols):
            window = selected[r:r + 10, c:c + 10].reshape(-1)
            np.testing.assert_array_equal(patches.observed[p], window)
            np.testing.assert_array_equal(patches.values[p], np.where(window, image[r:r + 10, c:c + 10].reshape(-1), 0.0))
            p += 1

def test_extract_geometry_mismatch(grid):
    m = ScalarMap(grid, np.zeros(grid.count))
    with pytest.raises(ShapeMismatch):
        extract_patches(m, SampleMask.full(grid), PatchGeometry(2, 2, 3, 16, 16))
    with pytest.raises(ShapeMismatch):
        extract_patches(m, SampleMask.full(grid), PatchGeometry(2, 2, 1, 8, 8))

def test_patch_set_validation():
    geom = PatchGeometry(2, 2, 1, 3, 3)
    with pytest.raises(ShapeMismatch):
        PatchSet(geom, np.zeros((3, 4)), np.ones((3, 4), dtype=bool))
    with pytest.raises(InvalidArgument):
        PatchSet(geom, np.full((4, 4), np.nan), np.ones((4, 4), dtype=bool))

def test_reconstruct_matches_overlap_average(rng):
    for _ in range(5):
        geom = PatchGeometry(2, 2, 1, 5, 5)
        model = random_model(rng, geom)
        out = reconstruct(model, geom, ProbeGrid(5, 5))
        np.testing.assert_allclose(out.data, brute_force_average(model, geom), rtol=1e-12, atol=1e-12)

def test_reconstruct_single_patch(rng):
    geom = PatchGeometry(4, 4, 1, 4, 4)
    model = random_model(rng, geom)
    out = reconstruct(model, geom, ProbeGrid(4, 4))
    np.testing.assert_allclose(out.values, model.D @ model.alpha[0])

def test_reconstruct_constant():
    geom = PatchGeometry(3, 3, 1, 6, 5)
    model = BpfaModel(
        D=np.full((9, 1), 0.5),
        w=np.full((geom.n_patches, 1), 2.0),
        u=np.ones((geom.n_patches, 1), dtype=bool),
        pi=[0.5],
        gamma_d=9.0,
        gamma_w=1.0,
        gamma_n=1.0,
    )
    out = reconstruct(model, geom, ProbeGrid(6, 5))
    np.testing.assert_allclose(out.values, 1.0)

def test_reconstruct_clips_rgb(rng):
    geom = PatchGeometry(2, 2, 3, 4, 4)
    out = reconstruct(random_model(rng, geom), geom, ProbeGrid(4, 4))
    assert isinstance(out, RgbMap)
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0

def test_reconstruct_skips_unfitted_patches():
    geom = PatchGeometry(1, 2, 1, 1, 3)
    model = BpfaModel(
        D=np.eye(2),
        w=[[1.0, 1.0], [5.0, 5.0]],
        u=np.ones((2, 2), dtype=bool),
        pi=[0.5, 0.5],
        gamma_d=2.0,
        gamma_w=1.0,
        gamma_n=1.0,
        fitted=[True, False],
    )
    out = reconstruct(model, geom, ProbeGrid(1, 3))
    # The last pixel is covered only by the unfitted patch.
    np.testing.assert_allclose(out.values, [1.0, 1.0, 5.0])

def test_reconstruct_is_atom_permutation_invariant(rng):
    geom = PatchGeometry(3, 3, 1, 7, 7)
    model = random_model(rng, geom, K=5)
    order = rng.permutation(5)
    a = reconstruct(model, geom, ProbeGrid(7, 7))
    b = reconstruct(model.permuted(order), geom, ProbeGrid(7, 7))
    np.testing.assert_allclose(a.data, b.data, rtol=1e-12, atol=1e-12)

def test_reconstruct_rejects_mismatch(rng):
    geom = PatchGeometry(2, 2, 1, 5, 5)
    model = random_model(rng, geom)
    with pytest.raises(ShapeMismatch):
        reconstruct(model, PatchGeometry(3, 3, 1, 5, 5), ProbeGrid(5, 5))
    with pytest.raises(ShapeMismatch):
        reconstruct(model, geom, ProbeGrid(5, 6))

def test_model_validation():
    with pytest.raises(InvalidArgument):
        BpfaModel(D=np.ones((4, 1)), w=np.ones((2, 1)), u=np.ones((2, 1)), pi=[1.0], gamma_d=4.0, gamma_w=1.0, gamma_n=1.0)
    with pytest.raises(InvalidArgument):
        BpfaModel(D=np.ones((4, 1)), w=np.ones((2, 1)), u=np.ones((2, 1)), pi=[0.5], gamma_d=4.0, gamma_w=0.0, gamma_n=1.0)
    with pytest.raises(ShapeMismatch):
        BpfaModel(D=np.ones((4, 2)), w=np.ones((2, 1)), u=np.ones((2, 1)), pi=[0.5], gamma_d=4.0, gamma_w=1.0, gamma_n=1.0)

def test_params_validation_and_dict():
    with pytest.raises(InvalidArgument):
        BpfaParams(K=0)
    with pytest.raises(InvalidArgument):
        BpfaParams(s=0)
    with pytest.raises(InvalidArgument):
        BpfaParams(init='sparse')
    params = BpfaParams(K=10, init='data', seed=4)
    assert params.init is InitScheme.data
    data = params.to_dict()
    assert data['init'] == 'data'
    again = BpfaParams.from_dict(data)
    assert again.to_dict() == data
    assert params.with_seed(9).seed == 9
    with pytest.raises(InvalidArgument):
        BpfaParams.from_dict({'atoms': 3})

def small_patches(rng, rate=0.5):
    grid = ProbeGrid(20, 20)
    image = np.where(np.arange(400).reshape(20, 20) % 20 < 9, 40.0, 200.0) + rng.normal(0.0, 2.0, size=(20, 20))
    m = ScalarMap(grid, image.reshape(-1))
    return extract_patches(m, uds_mask(grid, rate, 5), PatchGeometry(5, 5, 1, 20, 20))

def test_fit_objective_never_increases(rng):
    patches = small_patches(rng)
    model = bpfa_fit(patches, BpfaParams(K=8, s=3, batch_size=100, em_iters_per_batch=4, epochs=2, seed=1))
    assert len(model.history) == 2 * 3
    for trace in model.history:
        assert len(trace) == 5
        for before, after in zip(trace, trace[1:]):
            assert after <= before + 1e-8 * max(1.0, abs(before))

def test_fit_respects_sparsity_limit(rng):
    model = bpfa_fit(small_patches(rng), BpfaParams(K=8, s=2, batch_size=64, seed=2))
    assert model.u.sum(axis=1).max() <= 2
    assert np.all((model.pi > 0) & (model.pi < 1))
    assert model.gamma_n > 0 and model.gamma_w > 0

def test_fit_is_deterministic(rng):
    patches = small_patches(rng)
    params = BpfaParams(K=6, s=2, batch_size=50, seed=3)
    a, b = bpfa_fit(patches, params), bpfa_fit(patches, params)
    np.testing.assert_array_equal(a.D, b.D)
    np.testing.assert_array_equal(a.w, b.w)
    np.testing.assert_array_equal(a.u, b.u)
    assert a.history == b.history

def test_fit_needs_observations():
    grid = ProbeGrid(4, 4)
    patches = extract_patches(ScalarMap(grid, np.ones(16)), SampleMask(grid, ()), PatchGeometry(2, 2, 1, 4, 4))
    with pytest.raises(DegenerateInput):
        bpfa_fit(patches)

def test_fit_leaves_empty_patches_unused():
    grid = ProbeGrid(6, 6)
    mask = SampleMask(grid, [0, 1, 6, 7])
    patches = extract_patches(ScalarMap(grid, np.ones(36)), mask, PatchGeometry(2, 2, 1, 6, 6))
    model = bpfa_fit(patches, BpfaParams(K=3, s=1))
    np.testing.assert_array_equal(model.fitted, patches.observed.any(axis=1))
    assert not model.u[~model.fitted].any()

def test_fit_recovers_planted_dictionary(rng):
    atoms = rng.normal(size=(16, 5))
    atoms /= np.linalg.norm(atoms, axis=0)
    geom = PatchGeometry(4, 4, 1, 68, 68)
    labels = rng.integers(0, 5, size=geom.n_patches)
    scale = rng.uniform(0.5, 2.0, size=geom.n_patches) * rng.choice([-1.0, 1.0], size=geom.n_patches)
    values = (atoms[:, labels] * scale).T
    patches = PatchSet(geom, values, np.ones(values.shape, dtype=bool))

    model = bpfa_fit(patches, BpfaParams(s=2, seed=0))
    assert model.K == 25
    residual = np.linalg.norm(model.predict() - values, axis=1) / np.linalg.norm(values, axis=1)
    assert residual.mean() <= 1e-3

def test_fit_atoms_have_unit_norm(rng):
    model = bpfa_fit(small_patches(rng), BpfaParams(K=8, s=3, batch_size=100, seed=4))
    np.testing.assert_allclose(np.linalg.norm(model.D, axis=0), 1.0, rtol=1e-9)
    assert model.pi.min() >= 1 / 8 - 1e-12
    assert model.pi.max() <= 0.5

def test_fit_more_iterations_do_not_raise_residual(reference_maps):
    _, ipf = reference_maps
    mask = SampleMask.full(ipf.grid)
    geom = PatchGeometry.for_map(ipf, (6, 6))
    patches = extract_patches(ipf, mask, geom)

    def residual(iterations):
        errors = []
        for seed in range(5):
            model = bpfa_fit(patches, BpfaParams(em_iters_per_batch=iterations, seed=seed))
            errors.append(normalized_error(ipf, reconstruct(model, geom, ipf.grid)))
        return np.mean(errors)

    assert residual(5) <= residual(1)

def test_inpaint_constant_map():
    grid = ProbeGrid(12, 12)
    m = ScalarMap(grid, np.full(grid.count, 0.7))
    out = inpaint(m, SampleMask.full(grid), BpfaParams(K=4, s=2))
    np.testing.assert_allclose(out.values, 0.7, atol=1e-6)

def test_inpaint_reimpose_keeps_samples(grains, reference_maps):
    contrast, _ = reference_maps
    mask = uds_mask(grains.grid, 0.3, 2)
    out = inpaint(contrast, mask, BpfaParams(K=8, s=2), reimpose=True)
    selected = mask.as_boolean()
    np.testing.assert_array_equal(out.values[selected], contrast.values[selected])
    assert isinstance(out, ScalarMap)

def test_inpaint_rgb(grains, reference_maps):
    _, ipf = reference_maps
    mask = uds_mask(grains.grid, 0.5, 6)
    out = inpaint(ipf, mask, BpfaParams(K=8, s=2))
    assert isinstance(out, RgbMap)
    assert out.grid == ipf.grid
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0

def test_inpaint_explicit_geometry(grains, reference_maps):
    contrast, _ = reference_maps
    out = inpaint(contrast, SampleMask.full(grains.grid), BpfaParams(K=4, s=2), PatchGeometry(4, 4, 1, 32, 32))
    assert out.grid == contrast.grid

def test_inpaint_needs_samples(grid):
    with pytest.raises(DegenerateInput):
        inpaint(ScalarMap(grid, np.ones(grid.count)), SampleMask(grid, ()))

def test_inpaint_grid_mismatch(grid):
    with pytest.raises(ShapeMismatch):
        inpaint(ScalarMap(grid, np.ones(grid.count)), SampleMask.full(ProbeGrid(8, 8)))

@pytest.fixture(scope='module')
def large_maps():
    return phantom_maps(voronoi_phantom(ProbeGrid(128, 128), 8, seed=0))

@pytest.mark.slow
@pytest.mark.parametrize('index', [0, 1], ids=['band_contrast', 'ipf'])
def test_inpaint_full_mask_reproduces_phantom(large_maps, index):
    reference = large_maps[index]
    out = inpaint(reference, SampleMask.full(reference.grid))
    assert ssim(reference, out) >= 0.95

@pytest.mark.slow
def test_inpaint_quarter_samples(large_maps):
    contrast, _ = large_maps
    scores = {}
    for rate in (0.10, 0.25):
        mask = uds_mask(contrast.grid, rate, 3)
        scores[rate] = ssim(contrast, inpaint(apply_mask(contrast, mask), mask))
    assert scores[0.25] >= 0.9
    assert scores[0.10] >= 0.95 * scores[0.25]

@pytest.mark.slow
def test_inpaint_beats_zero_fill(grains, reference_maps):
    _, ipf = reference_maps
    mask = uds_mask(grains.grid, 0.25, 8)
    incomplete = apply_mask(ipf, mask)
    zero_fill = normalized_error(ipf, incomplete)
    nearest = normalized_error(ipf, nearest_fill(incomplete, mask))
    estimate = normalized_error(ipf, inpaint(incomplete, mask, BpfaParams(seed=1)))
    assert nearest < zero_fill
    assert estimate < zero_fill
