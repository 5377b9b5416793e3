from __future__ import annotations

from contextvars import ContextVar

__all__ = (
    'workers',
    'current_workers',
)

_cv_workers: ContextVar[int] = ContextVar('ebsdcs.workers', default=1)

class workers:
    """Context manager setting how many threads parallel helpers may use
    inside its block.

    Results never depend on this value; it only changes wall time.

    .. code-block:: python3

        with ebsdcs.workers(4):
            stack = ebsdcs.synth_stack(grains, mask, params)
    """

    def __init__(self, count: int):
        if count < 1:
            from .errors import InvalidArgument
            raise InvalidArgument(f'worker count must be at least 1, not {count}')
        self.count = count
        self._cv_token = None

    def __enter__(self) -> workers:
        self._cv_token = _cv_workers.set(self.count)
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        _cv_workers.reset(self._cv_token)
        self._cv_token = None

def current_workers() -> int:
    """:class:`int`: The worker count of the enclosing :class:`workers` block, 1 outside any."""
    return _cv_workers.get()
