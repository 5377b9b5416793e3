import math
import os

import pytest

from ebsdcs import (
    CSV_COLUMNS,
    BpfaParams,
    ExperimentConfig,
    InvalidArgument,
    MapKind,
    PhantomParams,
    build_scene,
    read_results,
    run_indexing_robustness,
    run_subsampling_sweep,
    run_zsp_correction,
    workers,
)

def small_config(tmp_path, **overrides):
    options = dict(
        phantom=PhantomParams(height=24, width=24, n_grains=3),
        bpfa=BpfaParams(K=6, s=2),
        noise_kinds=['gaussian'],
        snrs_db=[10.0],
        rates=[0.5],
        seeds=[0],
        output_dir=str(tmp_path),
    )
    options.update(overrides)
    return ExperimentConfig(**options)

def by_key(rows):
    return {(r.variant, r.noise_kind, r.rate, r.map_kind, r.seed): r for r in rows}

def test_scene_references(tmp_path):
    scene = build_scene(small_config(tmp_path), 0)
    assert scene.grains.n_grains == 3
    assert len(scene.library) == 3
    assert scene.reference(MapKind.ipf) is scene.ipf
    assert scene.reference(MapKind.band_contrast) is scene.reference_contrast
    # Boundary patterns are weaker, so the indexed reference keeps the boundaries darker.
    boundary = scene.contrast.values < 1.0
    assert scene.reference_contrast.values[boundary].mean() < scene.reference_contrast.values[~boundary].mean()

def test_indexing_robustness_noiseless_arm_is_exact(tmp_path):
    result = run_indexing_robustness(small_config(tmp_path))
    assert len(result.rows) == 2 * 2
    assert os.path.exists(result.csv_path)
    assert read_results(result.csv_path) == result.rows

    rows = by_key(result.rows)
    for kind in ('band_contrast', 'ipf'):
        noiseless = rows[('indexed', 'none', 1.0, kind, 0)]
        assert noiseless.hit_rate == 1.0
        assert noiseless.normalized_error == 0.0
        assert noiseless.ssim == pytest.approx(1.0)
        assert noiseless.measured_snr_db is None
        assert math.isinf(noiseless.target_snr_db)

    noisy = rows[('indexed', 'gaussian', 1.0, 'ipf', 0)]
    assert noisy.measured_snr_db == pytest.approx(10.0, abs=0.5)
    assert os.path.exists(os.path.join(str(tmp_path), 'indexing', 'seed0_noiseless', 'ipf.ppm'))

def test_zsp_correction_improves_planted_arm(tmp_path):
    config = small_config(tmp_path, noise_kinds=[], map_kinds=['ipf'])
    result = run_zsp_correction(config)
    rows = by_key(result.rows)
    uncorrected = rows[('uncorrected', 'none', 1.0, 'ipf', 0)]
    corrected = rows[('corrected', 'none', 1.0, 'ipf', 0)]
    assert uncorrected.hit_rate == pytest.approx(1.0 - round(0.23 * 24 * 24) / (24 * 24))
    assert corrected.normalized_error <= uncorrected.normalized_error
    assert corrected.effective_rate == uncorrected.effective_rate

def test_zsp_correction_without_zsps_changes_nothing(tmp_path):
    config = small_config(tmp_path, noise_kinds=[], map_kinds=['ipf'], zsp_fraction=0.0)
    rows = by_key(run_zsp_correction(config).rows)
    uncorrected = rows[('uncorrected', 'none', 1.0, 'ipf', 0)]
    corrected = rows[('corrected', 'none', 1.0, 'ipf', 0)]
    assert corrected.normalized_error == uncorrected.normalized_error == 0.0
    assert corrected.hit_rate == 1.0

def test_zsp_correction_needs_ipf(tmp_path):
    with pytest.raises(InvalidArgument):
        run_zsp_correction(small_config(tmp_path, zsp_correction=['band_contrast']))

def test_sweep_rows_and_files(tmp_path):
    config = small_config(tmp_path, rates=[0.25, 0.5])
    result = run_subsampling_sweep(config)
    assert len(result.rows) == 2 * 2 * 2
    variants = {(r.map_kind, r.variant) for r in result.rows}
    assert variants == {('ipf', 'zsp_corrected'), ('band_contrast', 'inpainted')}
    for row in result.rows:
        assert 0.0 <= row.effective_rate <= row.rate
        assert -1.0 <= row.ssim <= 1.0
    folder = os.path.join(str(tmp_path), 'sweep', 'seed0_noiseless_rate0.5')
    assert os.path.exists(os.path.join(folder, 'ipf.ppm'))
    assert os.path.exists(os.path.join(folder, 'band_contrast.pgm'))
    assert os.path.exists(os.path.join(folder, 'ipf_mask.json'))

def test_sweep_is_reproducible(tmp_path):
    a = run_subsampling_sweep(small_config(tmp_path / 'a', snrs_db=[0.0]))
    with workers(2):
        b = run_subsampling_sweep(small_config(tmp_path / 'b', snrs_db=[0.0]))

    def strip(rows):
        return sorted(r._replace(wall_time_s=0.0) for r in rows)

    assert strip(a.rows) == strip(b.rows)

def test_csv_is_byte_identical_for_same_seed(tmp_path):
    wall = CSV_COLUMNS.index('wall_time_s')

    def lines(folder):
        result = run_zsp_correction(small_config(tmp_path / folder, map_kinds=['ipf']))
        with open(result.csv_path, newline='') as fp:
            rows = [line.rstrip('\r\n').split(',') for line in fp]
        return [row[:wall] + row[wall + 1:] for row in rows]

    assert lines('a') == lines('b')

def mean_by(rows, key, value):
    groups = {}
    for row in rows:
        groups.setdefault(key(row), []).append(value(row))
    return {k: sum(v) / len(v) for k, v in groups.items()}

@pytest.mark.slow
def test_hit_rate_falls_with_snr(tmp_path):
    config = small_config(
        tmp_path,
        phantom=PhantomParams(height=64, width=64, n_grains=8),
        noise_kinds=['gaussian', 'poisson'],
        snrs_db=[5.0, 0.0, -5.0, -10.0],
        noiseless=False,
        map_kinds=['ipf'],
        seeds=[0, 1, 2, 3, 4],
    )
    with workers(4):
        rows = run_indexing_robustness(config).rows
    rates = mean_by(rows, lambda r: (r.noise_kind, r.target_snr_db), lambda r: r.hit_rate)
    for kind in ('gaussian', 'poisson'):
        assert rates[(kind, 5.0)] >= 0.99
        for high, low in ((5.0, 0.0), (0.0, -5.0), (-5.0, -10.0)):
            assert rates[(kind, low)] <= rates[(kind, high)] + 0.01

@pytest.mark.slow
def test_zsp_correction_at_default_size(tmp_path):
    config = ExperimentConfig(noise_kinds=[], map_kinds=['ipf'], seeds=[0], output_dir=str(tmp_path))
    assert (config.phantom.height, config.phantom.width) == (128, 128)
    rows = by_key(run_zsp_correction(config).rows)
    uncorrected = rows[('uncorrected', 'none', 1.0, 'ipf', 0)]
    corrected = rows[('corrected', 'none', 1.0, 'ipf', 0)]
    assert uncorrected.hit_rate == pytest.approx(0.77, abs=0.005)
    assert corrected.hit_rate == 1.0
    assert corrected.normalized_error <= 0.25 * uncorrected.normalized_error

@pytest.mark.slow
def test_sweep_quality_grows_with_rate(tmp_path):
    config = ExperimentConfig(noise_kinds=[], output_dir=str(tmp_path))
    assert config.rates == [0.01, 0.05, 0.10, 0.15, 0.20, 0.25]
    with workers(4):
        rows = run_subsampling_sweep(config).rows
    assert len(rows) == 5 * 6 * 2
    scores = mean_by(rows, lambda r: (r.map_kind, r.rate), lambda r: r.ssim)
    for kind in ('band_contrast', 'ipf'):
        trend = [scores[(kind, rate)] for rate in config.rates]
        for before, after in zip(trend, trend[1:]):
            assert after >= 0.99 * before
    assert scores[('band_contrast', 0.10)] >= 0.95 * scores[('band_contrast', 0.25)]
    assert scores[('ipf', 0.05)] >= 0.95 * scores[('ipf', 0.25)]
