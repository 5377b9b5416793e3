from __future__ import annotations

import concurrent.futures
import contextvars
import hashlib
import json
from typing import Any, Callable, Iterable, List, Sequence, TypeVar

import numpy as np

from .globals import current_workers

__all__ = (
    'derive_rng',
    'derive_seed',
    'parallel_map',
    'config_hash',
    'chunked',
)

T = TypeVar('T')
R = TypeVar('R')

def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a generator for the stream identified by ``seed`` and ``keys``.

    Streams with different keys are statistically independent; the same
    ``(seed, *keys)`` always yields the same stream regardless of which
    thread asks for it.

    Parameters
    -----------
    seed: :class:`int`
        The experiment-level seed.
    *keys: :class:`int`
        Sub-stream identifiers, e.g. a probe index.
    """
    if not keys:
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys)))

def derive_seed(seed: int, *keys: int) -> int:
    """A 32-bit seed for the stream identified by ``seed`` and ``keys``."""
    return int(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys)).generate_state(1)[0])

def parallel_map(fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
    """Apply ``fn`` to every item, returning results in input order.

    Uses a thread pool sized by :func:`~ebsdcs.current_workers`. With a single
    worker the items are processed inline.
    """
    count = current_workers()
    if count <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    ctx = contextvars.copy_context()
    with concurrent.futures.ThreadPoolExecutor(max_workers=count) as pool:
        futures = [pool.submit(ctx.copy().run, fn, item) for item in items]
        return [f.result() for f in futures]

def chunked(n: int, size: int) -> Iterable[slice]:
    """Yield consecutive slices covering ``range(n)`` in steps of ``size``."""
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))

def config_hash(payload: Any) -> str:
    """SHA-256 of the canonical JSON dump of ``payload``."""
    data = json.dumps(payload, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return hashlib.sha256(data).hexdigest()
