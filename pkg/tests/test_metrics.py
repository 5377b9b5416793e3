import numpy as np
import pytest

from ebsdcs import (
    DegenerateInput,
    InvalidArgument,
    ProbeGrid,
    RgbMap,
    ScalarMap,
    ShapeMismatch,
    SsimWindow,
    hit_rate,
    normalized_error,
    ssim,
)

def ssim_oracle(x, y, window=8, k1=0.01, k2=0.03):
    """Scalar SSIM, one window at a time."""
    L = x.max() - x.min() or 1.0
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    scores = []
    for i in range(x.shape[0] - window + 1):
        for j in range(x.shape[1] - window + 1):
            a = x[i:i + window, j:j + window].ravel()
            b = y[i:i + window, j:j + window].ravel()
            ma, mb = a.mean(), b.mean()
            va = ((a - ma) ** 2).mean()
            vb = ((b - mb) ** 2).mean()
            cov = ((a - ma) * (b - mb)).mean()
            scores.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(scores))

def test_normalized_error_examples():
    grid = ProbeGrid(1, 2)
    assert normalized_error(ScalarMap(grid, [3, 4]), ScalarMap(grid, [3, 4])) == 0.0
    assert normalized_error(ScalarMap(grid, [3, 4]), ScalarMap(grid, [0, 0])) == pytest.approx(1.0)
    assert normalized_error(ScalarMap(grid, [3, 4]), ScalarMap(grid, [3, 5])) == pytest.approx(0.2)

def test_normalized_error_errors():
    grid = ProbeGrid(1, 2)
    with pytest.raises(DegenerateInput):
        normalized_error(ScalarMap(grid, [0, 0]), ScalarMap(grid, [1, 1]))
    with pytest.raises(ShapeMismatch):
        normalized_error(ScalarMap(grid, [1, 1]), ScalarMap(ProbeGrid(2, 1), [1, 1]))

def test_normalized_error_joint_over_channels(rng):
    grid = ProbeGrid(4, 4)
    ref = RgbMap(grid, rng.uniform(size=(3, 16)))
    est = RgbMap(grid, rng.uniform(size=(3, 16)))
    expected = np.linalg.norm(ref.data - est.data) / np.linalg.norm(ref.data)
    assert normalized_error(ref, est) == pytest.approx(expected)

def test_hit_rate():
    assert hit_rate(0, 100) == 1.0
    assert hit_rate(23, 100) == pytest.approx(0.77)
    assert hit_rate(100, 100) == 0.0
    with pytest.raises(InvalidArgument):
        hit_rate(5, 4)
    with pytest.raises(InvalidArgument):
        hit_rate(0, 0)

def test_ssim_identical():
    image = np.random.default_rng(2).uniform(size=(32, 32))
    assert ssim(image, image) == pytest.approx(1.0)

def test_ssim_matches_oracle():
    rng = np.random.default_rng(42)
    for _ in range(10):
        x = rng.uniform(size=(32, 32))
        y = np.clip(x + rng.normal(scale=0.2, size=(32, 32)), 0, 1)
        assert ssim(x, y) == pytest.approx(ssim_oracle(x, y), abs=1e-6)

def test_ssim_accepts_maps(rng):
    grid = ProbeGrid(16, 16)
    x = rng.uniform(size=grid.count)
    y = rng.uniform(size=grid.count)
    assert ssim(ScalarMap(grid, x), ScalarMap(grid, y)) == pytest.approx(ssim(x.reshape(16, 16), y.reshape(16, 16)))

def test_ssim_rgb_is_channel_mean(rng):
    grid = ProbeGrid(12, 12)
    x = rng.uniform(size=(3, grid.count))
    y = rng.uniform(size=(3, grid.count))
    per_channel = [ssim(x[c].reshape(12, 12), y[c].reshape(12, 12), dynamic_range=np.ptp(x)) for c in range(3)]
    assert ssim(RgbMap(grid, x), RgbMap(grid, y)) == pytest.approx(np.mean(per_channel))

def test_ssim_drops_with_noise(rng):
    x = rng.uniform(size=(32, 32))
    mild = x + rng.normal(scale=0.05, size=x.shape)
    strong = x + rng.normal(scale=0.5, size=x.shape)
    assert ssim(x, mild) > ssim(x, strong)

def test_ssim_constant_images():
    x = np.full((10, 10), 0.5)
    assert ssim(x, x) == pytest.approx(1.0)

def test_ssim_gaussian_window(rng):
    x = rng.uniform(size=(20, 20))
    assert ssim(x, x, 7, window_kind=SsimWindow.gaussian) == pytest.approx(1.0)
    assert ssim(x, x[::-1], 7, window_kind='gaussian') < 0.5

def test_ssim_window_must_fit():
    with pytest.raises(InvalidArgument):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)), window=8)
    with pytest.raises(ShapeMismatch):
        ssim(np.zeros((8, 8)), np.zeros((8, 9)))
