from __future__ import annotations

from typing import TYPE_CHECKING, Sequence, Tuple

import numpy as np

from .abc import Map
from .errors import InvalidArgument, ShapeMismatch
from .grid import ProbeGrid

if TYPE_CHECKING:
    from typing_extensions import Self

    from .types.sidecar import Normalization as NormalizationPayload

__all__ = (
    'ScalarMap',
    'RgbMap',
    'NormalizationRecord',
    'normalize_map',
    'denormalize_map',
)

class ScalarMap(Map):
    """A single-channel map, such as band contrast.

    Parameters
    -----------
    grid: :class:`ProbeGrid`
        The probe grid.
    values: Sequence[:class:`float`]
        ``N_p`` finite values in row-major order. A ``(height, width)``
        array is accepted as well.
    """

    __slots__ = ()
    n_channels = 1

    def __init__(self, grid: ProbeGrid, values: Sequence[float]):
        super().__init__(grid, np.asarray(values, dtype=np.float64).reshape(1, -1))

    def _validate(self, data: np.ndarray) -> None:
        if not np.all(np.isfinite(data)):
            raise InvalidArgument('scalar map values must be finite')

    @classmethod
    def from_image(cls, image: np.ndarray) -> Self:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2:
            raise ShapeMismatch('scalar map image must be 2-D', expected=2, received=image.ndim)
        return cls(ProbeGrid(*image.shape), image.reshape(-1))

    @property
    def values(self) -> np.ndarray:
        """:class:`numpy.ndarray`: The read-only value vector of length ``N_p``."""
        return self._data[0]

class RgbMap(Map):
    """A three-channel map with values in ``[0, 1]``, such as an IPF colouring.

    Parameters
    -----------
    grid: :class:`ProbeGrid`
        The probe grid.
    channels: Sequence[Sequence[:class:`float`]]
        Red, green and blue value vectors of length ``N_p``.
    """

    __slots__ = ()
    n_channels = 3

    def __init__(self, grid: ProbeGrid, channels: Sequence[Sequence[float]]):
        channels = np.asarray(channels, dtype=np.float64)
        if channels.ndim != 2 or channels.shape[0] != 3:
            raise ShapeMismatch('RGB map needs exactly three channel vectors', expected=(3, grid.count), received=channels.shape)
        super().__init__(grid, channels)

    def _validate(self, data: np.ndarray) -> None:
        if not np.all(np.isfinite(data)) or data.min(initial=0.0) < 0.0 or data.max(initial=0.0) > 1.0:
            raise InvalidArgument('RGB map values must lie in [0, 1]')

    @classmethod
    def from_image(cls, image: np.ndarray) -> Self:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ShapeMismatch('RGB map image must be height x width x 3', received=image.shape)
        return cls(ProbeGrid(*image.shape[:2]), np.moveaxis(image, -1, 0).reshape(3, -1))

    def channel(self, index: int) -> np.ndarray:
        """Return the read-only value vector of channel ``index`` (0, 1 or 2)."""
        return self._data[index]

    @property
    def red(self) -> np.ndarray:
        return self._data[0]

    @property
    def green(self) -> np.ndarray:
        return self._data[1]

    @property
    def blue(self) -> np.ndarray:
        return self._data[2]

class NormalizationRecord:
    """What :func:`normalize_map` did, so that :func:`denormalize_map`
    can undo it exactly.

    Attributes
    -----------
    grid: :class:`ProbeGrid`
        Grid of the normalised map.
    source_min: :class:`float`
        Minimum of the original values.
    source_max: :class:`float`
        Maximum of the original values.
    target_lo: :class:`float`
        Lower end of the target range.
    target_hi: :class:`float`
        Upper end of the target range.
    degenerate: :class:`bool`
        Whether the original map was constant.
    """

    __slots__ = ('grid', 'source_min', 'source_max', 'target_lo', 'target_hi')

    def __init__(self, *, grid: ProbeGrid, source_min: float, source_max: float, target_lo: float, target_hi: float):
        self.grid = grid
        self.source_min = float(source_min)
        self.source_max = float(source_max)
        self.target_lo = float(target_lo)
        self.target_hi = float(target_hi)

    def __repr__(self) -> str:
        return (
            f'<NormalizationRecord source=[{self.source_min:.6g}, {self.source_max:.6g}] '
            f'target=[{self.target_lo:.6g}, {self.target_hi:.6g}] degenerate={self.degenerate}>'
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, NormalizationRecord) and self.to_dict() == other.to_dict()

    __hash__ = None  # type: ignore

    @property
    def degenerate(self) -> bool:
        return self.source_max == self.source_min

    def to_dict(self) -> NormalizationPayload:
        return {
            'height': self.grid.height,
            'width': self.grid.width,
            'source_min': self.source_min,
            'source_max': self.source_max,
            'target_lo': self.target_lo,
            'target_hi': self.target_hi,
        }

    @classmethod
    def from_dict(cls, data: NormalizationPayload) -> Self:
        return cls(
            grid=ProbeGrid(data['height'], data['width']),
            source_min=data['source_min'],
            source_max=data['source_max'],
            target_lo=data['target_lo'],
            target_hi=data['target_hi'],
        )

def normalize_map(map: ScalarMap, target_lo: float = 0.0, target_hi: float = 255.0) -> Tuple[ScalarMap, NormalizationRecord]:
    """Affinely map the values of ``map`` from ``[min, max]`` onto ``[target_lo, target_hi]``.

    A constant map becomes constant ``target_lo`` and the returned record is
    flagged :attr:`~NormalizationRecord.degenerate`.

    Raises
    -------
    InvalidArgument
        ``target_lo >= target_hi``.
    """
    if not target_lo < target_hi:
        raise InvalidArgument(f'target range must be increasing, got [{target_lo}, {target_hi}]')

    values = map.values
    lo, hi = float(values.min()), float(values.max())
    record = NormalizationRecord(grid=map.grid, source_min=lo, source_max=hi, target_lo=target_lo, target_hi=target_hi)
    if record.degenerate:
        return ScalarMap(map.grid, np.full(map.grid.count, float(target_lo))), record

    scaled = target_lo + (values - lo) * ((target_hi - target_lo) / (hi - lo))
    return ScalarMap(map.grid, scaled), record

def denormalize_map(map: ScalarMap, record: NormalizationRecord) -> ScalarMap:
    """Invert :func:`normalize_map` using its ``record``.

    Raises
    -------
    ShapeMismatch
        ``map`` is not on the grid the record was produced for.
    """
    if map.grid != record.grid:
        raise ShapeMismatch('normalization record belongs to another grid', expected=record.grid, received=map.grid)
    if record.degenerate:
        return ScalarMap(map.grid, np.full(map.grid.count, record.source_min))

    span = record.source_max - record.source_min
    values = record.source_min + (map.values - record.target_lo) * (span / (record.target_hi - record.target_lo))
    return ScalarMap(map.grid, values)
