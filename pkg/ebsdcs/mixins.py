from __future__ import annotations

from typing import TYPE_CHECKING

from .errors import ShapeMismatch

__all__ = (
    'GridBound',
)

if TYPE_CHECKING:
    from .grid import ProbeGrid

class GridBound:
    """Mixin for objects laid out over a :class:`ProbeGrid`."""
    __slots__ = ()

    grid: ProbeGrid

    def _require_grid(self, other: GridBound, what: str = 'operand') -> None:
        if other.grid != self.grid:
            raise ShapeMismatch(f'{what} lies on a different probe grid', expected=self.grid, received=other.grid)
