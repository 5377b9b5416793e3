from __future__ import annotations

import logging
from typing import Optional, Union

import numpy as np
from scipy.signal import fftconvolve

from .abc import Map
from .enums import SsimWindow, to_enum
from .errors import DegenerateInput, InvalidArgument, ShapeMismatch

__all__ = (
    'normalized_error',
    'hit_rate',
    'ssim',
)

log = logging.getLogger(__name__)

MapLike = Union[Map, np.ndarray]

def _as_channels(x: MapLike) -> np.ndarray:
    """``(channels, height, width)`` view of a map or a 2-D / ``H × W × C`` array."""
    if isinstance(x, Map):
        return x.data.reshape(x.n_channels, *x.grid.shape)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None]
    if x.ndim == 3:
        return np.moveaxis(x, -1, 0)
    raise ShapeMismatch('expected a map, a 2-D image or an H x W x C image', received=x.shape)

def _pair(ref: MapLike, est: MapLike):
    a, b = _as_channels(ref), _as_channels(est)
    if a.shape != b.shape:
        raise ShapeMismatch('maps differ in shape', expected=a.shape, received=b.shape)
    return a, b

def normalized_error(ref: MapLike, est: MapLike) -> float:
    """``‖ref − est‖ / ‖ref‖`` over all channels jointly.

    Raises
    -------
    ShapeMismatch
        The maps differ in shape.
    DegenerateInput
        ``ref`` is zero everywhere.
    """
    a, b = _pair(ref, est)
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        raise DegenerateInput('normalized error is undefined for a zero reference')
    return float(np.linalg.norm(a - b)) / norm

def hit_rate(zsp_count: int, n_p: int) -> float:
    """``1 − zsp_count / N_p``, the fraction of successfully indexed patterns."""
    if n_p < 1 or not 0 <= zsp_count <= n_p:
        raise InvalidArgument(f'need 0 <= zsp_count <= N_p with N_p >= 1, got {zsp_count} of {n_p}')
    return 1.0 - zsp_count / n_p

def _window(size: int, kind: SsimWindow, sigma: float) -> np.ndarray:
    if kind is SsimWindow.gaussian:
        offsets = np.arange(size) - (size - 1) / 2.0
        profile = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
        kernel = np.outer(profile, profile)
    else:
        kernel = np.ones((size, size))
    return kernel / kernel.sum()

def _ssim_channel(x: np.ndarray, y: np.ndarray, kernel: np.ndarray, c1: float, c2: float) -> float:
    def local(img):
        return fftconvolve(img, kernel, mode='valid')

    mu_x, mu_y = local(x), local(y)
    var_x = local(x * x) - mu_x ** 2
    var_y = local(y * y) - mu_y ** 2
    cov = local(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))

def ssim(
    ref: MapLike,
    est: MapLike,
    window: int = 8,
    k1: float = 0.01,
    k2: float = 0.03,
    dynamic_range: Optional[float] = None,
    *,
    window_kind: SsimWindow = SsimWindow.uniform,
    sigma: float = 1.5,
) -> float:
    """Mean structural similarity over every fully contained window.

    Local statistics use population moments over a ``window × window``
    window, uniform by default. Multi-channel maps score the unweighted
    mean of their per-channel SSIM.

    Parameters
    -----------
    ref: Union[:class:`Map`, :class:`numpy.ndarray`]
        The reference.
    est: Union[:class:`Map`, :class:`numpy.ndarray`]
        The estimate, same shape as ``ref``.
    window: :class:`int`
        Window side. Defaults to 8.
    k1: :class:`float`
        Luminance constant, ``C1 = (k1·L)²``.
    k2: :class:`float`
        Contrast constant, ``C2 = (k2·L)²``.
    dynamic_range: Optional[:class:`float`]
        ``L``. Defaults to the data range of ``ref``, or 1 when ``ref`` is
        constant.
    window_kind: :class:`SsimWindow`
        ``uniform`` or ``gaussian`` weighting.
    sigma: :class:`float`
        Standard deviation of the gaussian window.
    """
    a, b = _pair(ref, est)
    if window < 1 or window > min(a.shape[1:]):
        raise InvalidArgument(f'window {window} does not fit a {a.shape[1]}x{a.shape[2]} map')

    if dynamic_range is None:
        dynamic_range = float(a.max() - a.min()) or 1.0
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    kernel = _window(window, to_enum(SsimWindow, window_kind), sigma)
    return float(np.mean([_ssim_channel(x, y, kernel, c1, c2) for x, y in zip(a, b)]))
