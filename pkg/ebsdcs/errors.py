"""Exceptions raised by ebsdcs."""
from __future__ import annotations

from typing import Any, Optional

__all__ = (
    'EbsdcsException',
    'InvalidArgument',
    'ShapeMismatch',
    'DegenerateInput',
    'FormatError',
    'ExperimentError',
)

class EbsdcsException(Exception):
    """Base class for all ebsdcs exceptions."""
    pass

class InvalidArgument(EbsdcsException, ValueError):
    """An exception that is raised when an argument to a
    function is outside of its valid domain."""
    pass

class ShapeMismatch(EbsdcsException, ValueError):
    """Thrown when grids, lengths, channel counts or patch geometries
    of two operands do not agree.

    Attributes
    -----------
    expected: Any
        What the operation required.
    received: Any
        What it was given.
    """
    def __init__(self, message: str, *, expected: Any = None, received: Any = None):
        self.expected = expected
        self.received = received
        if expected is not None or received is not None:
            message = f'{message} (expected {expected!r}, received {received!r})'
        super().__init__(message)

class DegenerateInput(EbsdcsException, ValueError):
    """Thrown when the input is well-formed but makes the operation
    undefined, e.g. a zero-norm reference vector."""
    pass

class FormatError(EbsdcsException):
    """A file does not follow the documented on-disk format.

    Attributes
    -----------
    path: Optional[:class:`str`]
        The offending file, if known.
    """
    def __init__(self, message: str, *, path: Optional[str] = None):
        self.path = path
        super().__init__(f'{path}: {message}' if path else message)

class ExperimentError(EbsdcsException):
    """An experiment arm failed. The original exception is chained
    as ``__cause__``.

    Attributes
    -----------
    arm: :class:`str`
        Human-readable name of the failed arm.
    """
    def __init__(self, arm: str, original: BaseException):
        self.arm = arm
        self.original = original
        super().__init__(f'arm {arm} failed: {original}')
