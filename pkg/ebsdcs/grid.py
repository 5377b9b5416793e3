from __future__ import annotations

from typing import TYPE_CHECKING, Iterable, Tuple, Union

import numpy as np

from .errors import InvalidArgument, ShapeMismatch
from .mixins import GridBound

if TYPE_CHECKING:
    from typing_extensions import Self

    from .types.mask import Mask as MaskPayload

__all__ = (
    'ProbeGrid',
    'SampleMask',
    'as_index_set',
)

def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array

def as_index_set(indices: Iterable[int]) -> np.ndarray:
    """Return ``indices`` as a sorted, duplicate-free, read-only ``int64`` array."""
    return _frozen(np.unique(np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices, dtype=np.int64)))

class ProbeGrid:
    """The ``height × width`` raster of probe positions.

    Probe positions are numbered row-major, matching the raster order in
    which a beam scans the sample.

    .. container:: operations

        .. describe:: x == y

            Checks if two grids have the same dimensions.

        .. describe:: hash(x)

            Returns the grid's hash.

    Attributes
    -----------
    height: :class:`int`
        Number of scan rows.
    width: :class:`int`
        Number of probe positions per row.
    """

    __slots__ = ('height', 'width')

    def __init__(self, height: int, width: int):
        if int(height) < 1 or int(width) < 1:
            raise InvalidArgument(f'probe grid must be at least 1x1, not {height}x{width}')
        self.height = int(height)
        self.width = int(width)

    def __eq__(self, other) -> bool:
        return isinstance(other, ProbeGrid) and self.shape == other.shape

    def __hash__(self) -> int:
        return hash(self.shape)

    def __repr__(self) -> str:
        return f'<ProbeGrid height={self.height} width={self.width}>'

    @property
    def count(self) -> int:
        """:class:`int`: The number of probe positions."""
        return self.height * self.width

    @property
    def shape(self) -> Tuple[int, int]:
        """Tuple[:class:`int`, :class:`int`]: ``(height, width)``."""
        return (self.height, self.width)

    def coords_of(self, index: Union[int, np.ndarray]):
        """Return ``(row, col)`` for a linear index or an array of them."""
        return np.divmod(index, self.width) if isinstance(index, np.ndarray) else divmod(int(index), self.width)

    def index_of(self, row, col):
        """Return the linear index of ``(row, col)``. Accepts arrays."""
        return row * self.width + col

class SampleMask(GridBound):
    """The set of sampled probe positions and the zero-solution pixels
    that were removed from it.

    Attributes
    -----------
    grid: :class:`ProbeGrid`
        The grid the indices refer to.
    sampled: :class:`numpy.ndarray`
        Ascending indices of the sampled positions.
    zsp: :class:`numpy.ndarray`
        Ascending indices recorded as zero-solution pixels. Never
        overlaps ``sampled``.
    """

    __slots__ = ('grid', 'sampled', 'zsp')

    def __init__(self, grid: ProbeGrid, sampled: Iterable[int], zsp: Iterable[int] = ()):
        self.grid = grid
        self.sampled = as_index_set(sampled)
        self.zsp = as_index_set(zsp)

        for name, indices in (('sampled', self.sampled), ('zsp', self.zsp)):
            if indices.size and (indices[0] < 0 or indices[-1] >= grid.count):
                raise InvalidArgument(f'{name} indices must lie in [0, {grid.count}), got range [{indices[0]}, {indices[-1]}]')

        if np.intersect1d(self.sampled, self.zsp, assume_unique=True).size:
            raise InvalidArgument('sampled and zsp index sets overlap')

    @classmethod
    def full(cls, grid: ProbeGrid) -> Self:
        """A mask sampling every probe position."""
        return cls(grid, np.arange(grid.count, dtype=np.int64))

    @classmethod
    def from_boolean(cls, grid: ProbeGrid, selected: np.ndarray) -> Self:
        """A mask from a boolean vector or ``height × width`` array."""
        selected = np.asarray(selected, dtype=bool).reshape(-1)
        if selected.size != grid.count:
            raise ShapeMismatch('boolean mask has the wrong size', expected=grid.count, received=selected.size)
        return cls(grid, np.flatnonzero(selected))

    def __repr__(self) -> str:
        return f'<SampleMask grid={self.grid.shape} sampled={self.count} zsp={self.zsp.size}>'

    def __len__(self) -> int:
        return self.count

    def __contains__(self, index: int) -> bool:
        pos = np.searchsorted(self.sampled, index)
        return bool(pos < self.sampled.size and self.sampled[pos] == index)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SampleMask)
            and self.grid == other.grid
            and np.array_equal(self.sampled, other.sampled)
            and np.array_equal(self.zsp, other.zsp)
        )

    __hash__ = None  # type: ignore

    @property
    def count(self) -> int:
        """:class:`int`: ``|Ω|``, the number of sampled positions."""
        return int(self.sampled.size)

    def as_boolean(self) -> np.ndarray:
        """The diagonal of the mask operator as a boolean vector of length ``N_p``."""
        selected = np.zeros(self.grid.count, dtype=bool)
        selected[self.sampled] = True
        return selected

    def to_dict(self) -> MaskPayload:
        return {
            'height': self.grid.height,
            'width': self.grid.width,
            'sampled': [int(i) for i in self.sampled],
            'zsp': [int(i) for i in self.zsp],
        }

    @classmethod
    def from_dict(cls, data: MaskPayload) -> Self:
        try:
            grid = ProbeGrid(data['height'], data['width'])
            return cls(grid, data['sampled'], data.get('zsp', ()))
        except KeyError as e:
            raise InvalidArgument(f'mask document is missing {e.args[0]!r}') from e
