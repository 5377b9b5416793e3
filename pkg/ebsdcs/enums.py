"""Enumerations used across ebsdcs.

Members are immutable ``(name, value)`` tuples created by :class:`EnumMeta`.
Calling the class with a value looks the member up, ``str(member)`` is the
value as written to configs and CSV rows, and iterating the class yields the
members in definition order. A second name bound to an existing value is an
alias of that member.
"""
from collections import namedtuple
from typing import TYPE_CHECKING, Any, Type, TypeVar

from .errors import InvalidArgument

__all__ = (
    'NoiseKind',
    'MapKind',
    'SamplingStrategy',
    'SsimWindow',
    'InitScheme',
    'to_enum',
)

T = TypeVar('T')

def _member_type(enum_name: str):
    cls = namedtuple(f'{enum_name}Member', 'name value')
    cls.__repr__ = lambda self: f'<{enum_name}.{self.name}: {self.value!r}>'
    cls.__str__ = lambda self: str(self.value)
    return cls

class EnumMeta(type):
    def __new__(mcs, name, bases, attrs):
        member_type = _member_type(name)
        by_value = {}
        for key, value in list(attrs.items()):
            if key.startswith('_') or callable(value) or isinstance(value, (classmethod, staticmethod, property)):
                continue
            member = by_value.get(value)
            if member is None:
                member = by_value[value] = member_type(key, value)
            attrs[key] = member

        attrs['_by_value_'] = by_value
        enum_cls = super().__new__(mcs, name, bases, attrs)
        member_type._enum_cls_ = enum_cls
        return enum_cls

    def __iter__(cls):
        return iter(cls._by_value_.values())

    def __len__(cls):
        return len(cls._by_value_)

    def __repr__(cls):
        return f'<enum {cls.__name__}>'

    def __call__(cls, value):
        try:
            return cls._by_value_[value]
        except (KeyError, TypeError):
            raise ValueError(f'{value!r} is not a valid {cls.__name__}') from None

    def __setattr__(cls, name, value):
        raise TypeError(f'{cls.__name__} is immutable')

    def __instancecheck__(cls, instance):
        return getattr(type(instance), '_enum_cls_', None) is cls

if TYPE_CHECKING:
    from enum import Enum
else:
    class Enum(metaclass=EnumMeta):
        pass

class NoiseKind(Enum):
    """The detector noise model applied to patterns."""
    gaussian = 'gaussian'
    poisson = 'poisson'
    none = 'none'

    # aliases
    noiseless = 'none'

class MapKind(Enum):
    """Which EBSD map a reconstruction or metric refers to."""
    band_contrast = 'band_contrast'
    ipf = 'ipf'

    # aliases
    bc = 'band_contrast'

class SamplingStrategy(Enum):
    """How probe positions are subsampled."""
    uds = 'uds'
    linehop = 'linehop'

class SsimWindow(Enum):
    """Local window used by :func:`~ebsdcs.ssim`."""
    uniform = 'uniform'
    gaussian = 'gaussian'

class InitScheme(Enum):
    """How BPFA dictionary atoms are initialised.

    Both schemes start with one constant atom per channel. ``gaussian`` draws
    the rest i.i.d. normal; ``data`` copies randomly chosen, fully observed
    patches and falls back to ``gaussian`` when too few exist. All atoms are
    scaled to unit norm.
    """
    gaussian = 'gaussian'
    data = 'data'

def to_enum(cls: Type[T], value: Any) -> T:
    """Return the member of ``cls`` for ``value``, which may already be a member.

    Raises
    -------
    InvalidArgument
        ``value`` names no member of ``cls``.
    """
    if isinstance(value, cls):
        return value
    try:
        return cls(value)
    except ValueError:
        valid = ', '.join(repr(m.value) for m in cls)
        raise InvalidArgument(f'{value!r} is not a valid {cls.__name__}, expected one of {valid}') from None
