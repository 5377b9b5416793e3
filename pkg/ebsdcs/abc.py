from __future__ import annotations

import abc
from typing import TYPE_CHECKING, ClassVar

import numpy as np

from .errors import ShapeMismatch
from .mixins import GridBound

if TYPE_CHECKING:
    from typing_extensions import Self

    from .grid import ProbeGrid

__all__ = (
    'Map',
)

class Map(GridBound, metaclass=abc.ABCMeta):
    """An ABC for discretised EBSD maps over a probe grid.

    Every map stores its values as a read-only ``(n_channels, N_p)`` float
    array in row-major probe order. Values are real numbers; quantisation
    only happens when a map is written to disk.

    .. container:: operations

        .. describe:: x == y

            Checks that two maps have the same type, grid and bit-identical values.
    """

    __slots__ = ('grid', '_data')

    n_channels: ClassVar[int]

    def __init__(self, grid: ProbeGrid, data: np.ndarray):
        data = np.array(data, dtype=np.float64, copy=True).reshape(self.n_channels, -1)
        if data.shape[1] != grid.count:
            raise ShapeMismatch(f'{type(self).__name__} values do not cover the grid', expected=grid.count, received=data.shape[1])
        self._validate(data)
        data.setflags(write=False)
        self.grid = grid
        self._data = data

    @abc.abstractmethod
    def _validate(self, data: np.ndarray) -> None:
        raise NotImplementedError

    @property
    def data(self) -> np.ndarray:
        """:class:`numpy.ndarray`: The read-only ``(n_channels, N_p)`` value array."""
        return self._data

    def with_data(self, data: np.ndarray) -> Self:
        """A map of the same type and grid holding ``data``."""
        return type(self)._from_data(self.grid, data)

    @classmethod
    def _from_data(cls, grid: ProbeGrid, data: np.ndarray) -> Self:
        self = cls.__new__(cls)
        Map.__init__(self, grid, data)
        return self

    def to_image(self) -> np.ndarray:
        """The map as a ``(height, width)`` or ``(height, width, 3)`` array."""
        image = self._data.reshape(self.n_channels, *self.grid.shape)
        return image[0].copy() if self.n_channels == 1 else np.moveaxis(image, 0, -1).copy()

    def __eq__(self, other) -> bool:
        return type(other) is type(self) and other.grid == self.grid and np.array_equal(other._data, self._data)

    __hash__ = None  # type: ignore

    def __repr__(self) -> str:
        return f'<{type(self).__name__} grid={self.grid.shape} min={self._data.min():.6g} max={self._data.max():.6g}>'
