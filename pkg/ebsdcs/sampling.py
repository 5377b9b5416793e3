"""
Probe subsampling, the mask operator and zero-solution pixel handling.

Two strategies are offered. Uniform density sampling (UDS) draws
``max(1, ⌊rate·N_p⌋)`` positions uniformly without replacement. Linehop
starts from a raster template with the same count, spread evenly along
every row, and lets each template position hop to the row above, below
or stay, keeping its column.

ZSP detection is an exact-zero test because the indexer writes exact
zeros for failed patterns. Measured data may need a tolerance.
"""
from __future__ import annotations

import logging
import math
from typing import Iterable, Tuple, TypeVar, Union

import numpy as np

from .abc import Map
from .enums import SamplingStrategy, to_enum
from .errors import InvalidArgument
from .grid import ProbeGrid, SampleMask, as_index_set

__all__ = (
    'sample_count',
    'uds_mask',
    'linehop_template',
    'linehop_mask',
    'make_mask',
    'apply_mask',
    'merge_zsp',
    'detect_zsp',
    'effective_rate',
    'plant_zsp',
)

log = logging.getLogger(__name__)

M = TypeVar('M', bound=Map)

def sample_count(grid: ProbeGrid, rate: float) -> int:
    """``max(1, ⌊rate·N_p⌋)``.

    Raises
    -------
    InvalidArgument
        ``rate`` is not in ``(0, 1]``.
    """
    if not 0.0 < rate <= 1.0:
        raise InvalidArgument(f'sampling rate must lie in (0, 1], not {rate}')
    return max(1, math.floor(rate * grid.count))

def uds_mask(grid: ProbeGrid, rate: float, seed: int) -> SampleMask:
    """Uniform density sampling of ``rate`` of the probe positions."""
    count = sample_count(grid, rate)
    if count == grid.count:
        return SampleMask.full(grid)
    rng = np.random.default_rng(seed)
    return SampleMask(grid, rng.choice(grid.count, size=count, replace=False))

def linehop_template(grid: ProbeGrid, rate: float) -> Tuple[np.ndarray, np.ndarray]:
    """The evenly spaced raster template of :func:`linehop_mask`.

    Returns ``(rows, cols)`` of ``max(1, ⌊rate·N_p⌋)`` template positions.
    Row ``r`` holds ``⌊(r+1)M/H⌋ - ⌊rM/H⌋`` of them, centred in equal
    column segments.
    """
    count = sample_count(grid, rate)
    edges = (np.arange(grid.height + 1, dtype=np.int64) * count) // grid.height
    per_row = np.diff(edges)

    rows, cols = [], []
    for r, m in enumerate(per_row):
        if m == 0:
            continue
        rows.append(np.full(m, r, dtype=np.int64))
        cols.append(((np.arange(m) + 0.5) * grid.width / m).astype(np.int64))
    return np.concatenate(rows), np.concatenate(cols)

def linehop_mask(grid: ProbeGrid, rate: float, seed: int) -> SampleMask:
    """Linehop sampling: template positions hop by at most one row.

    Each template position tries its hops ``{-1, 0, +1}`` (those inside the
    grid) in a random order and takes the first free pixel. Positions
    whose three candidates are all taken are dropped, so the count may fall
    slightly short of the template count.
    """
    rows, cols = linehop_template(grid, rate)
    if rows.size == grid.count:
        return SampleMask.full(grid)

    rng = np.random.default_rng(seed)
    taken = np.zeros(grid.shape, dtype=bool)
    hops = np.array([-1, 0, 1])
    for r, c in zip(rows, cols):
        for hop in rng.permutation(hops):
            target = r + hop
            if 0 <= target < grid.height and not taken[target, c]:
                taken[target, c] = True
                break

    mask = SampleMask.from_boolean(grid, taken)
    if mask.count < rows.size:
        log.debug(f'Linehop dropped {rows.size - mask.count} colliding template positions.')
    return mask

def make_mask(strategy: Union[SamplingStrategy, str], grid: ProbeGrid, rate: float, seed: int) -> SampleMask:
    """Dispatch to :func:`uds_mask` or :func:`linehop_mask`."""
    strategy = to_enum(SamplingStrategy, strategy)
    if strategy is SamplingStrategy.linehop:
        return linehop_mask(grid, rate, seed)
    return uds_mask(grid, rate, seed)

def apply_mask(map: M, mask: SampleMask) -> M:
    """Apply the mask operator: sampled values are kept bit-exact, every
    channel of an unsampled position becomes exactly zero."""
    map._require_grid(mask, 'mask')
    return map.with_data(np.where(mask.as_boolean()[None, :], map.data, 0.0))

def merge_zsp(mask: SampleMask, zsp: Iterable[int]) -> SampleMask:
    """Treat ``zsp`` as unsampled: remove them from ``Ω`` and record them."""
    zsp = as_index_set(zsp)
    if zsp.size and (zsp[0] < 0 or zsp[-1] >= mask.grid.count):
        raise InvalidArgument(f'ZSP indices must lie in [0, {mask.grid.count})')
    sampled = np.setdiff1d(mask.sampled, zsp, assume_unique=True)
    recorded = np.union1d(mask.zsp, zsp)
    return SampleMask(mask.grid, sampled, recorded)

def detect_zsp(map: Map, mask: SampleMask) -> np.ndarray:
    """Sampled positions whose value is exactly zero in every channel."""
    map._require_grid(mask, 'mask')
    zero = np.all(map.data[:, mask.sampled] == 0.0, axis=0)
    return as_index_set(mask.sampled[zero])

def effective_rate(mask: SampleMask) -> float:
    """``|Ω| / N_p`` of the mask, after any ZSP merging."""
    return mask.count / mask.grid.count

def plant_zsp(mask: SampleMask, fraction: float, seed: int) -> np.ndarray:
    """Pick ``round(fraction·|Ω|)`` sampled positions uniformly to act as ZSPs.

    Raises
    -------
    InvalidArgument
        ``fraction`` is not in ``[0, 1]``.
    """
    if not 0.0 <= fraction <= 1.0:
        raise InvalidArgument(f'ZSP fraction must lie in [0, 1], not {fraction}')
    count = int(round(fraction * mask.count))
    rng = np.random.default_rng(seed)
    return as_index_set(rng.choice(mask.sampled, size=count, replace=False)) if count else as_index_set(())
