"""
A Hough-based indexer for synthetic patterns.

Each pattern is projected into ``(θ, ρ)`` line space. Every pixel votes once
per angle, into the offset bin its centred coordinates fall in, with its
intensity. Peaks of the accumulator, normalized by the number of pixels on
each line, are taken as bands. The detected band set is compared with the
signatures of an :class:`OrientationLibrary`; the nearest entry gives the
orientation. Patterns with too few bands are zero-solution pixels.
"""
from __future__ import annotations

import functools
import logging
import math
from typing import TYPE_CHECKING, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment

from .errors import InvalidArgument, ShapeMismatch
from .grid import SampleMask, as_index_set
from .maps import RgbMap, ScalarMap
from .metrics import hit_rate
from .phantom import Pattern, PatternParams, PatternStack, render
from .sampling import merge_zsp
from .utils import chunked, derive_rng, parallel_map

if TYPE_CHECKING:
    from typing_extensions import Self

    from .types.config import IndexingParams as IndexingParamsPayload

__all__ = (
    'HoughAccumulator',
    'Band',
    'IndexingParams',
    'OrientationLibrary',
    'IndexingResult',
    'IndexedMaps',
    'hough_transform',
    'detect_bands',
    'band_contrast',
    'signature_of',
    'signature_distance',
    'build_library',
    'index_pattern',
    'index_stack',
)

log = logging.getLogger(__name__)

Signature = Tuple[Tuple[int, int], ...]

class IndexingParams:
    """Settings of the Hough indexer.

    Parameters
    -----------
    n_theta: :class:`int`
        Angle bins over ``[0, π)``. Defaults to 40.
    n_rho: :class:`int`
        Offset bins over ``[-ρ_max, ρ_max]``. Defaults to 40.
    min_line_fraction: :class:`float`
        Bins whose line holds fewer pixels than this fraction of the longest
        line are ignored by the detector. Defaults to 0.5.
    max_bands: :class:`int`
        Most bands detected per pattern. Defaults to 11.
    min_prominence: :class:`float`
        Smallest ``(peak - median) / std`` accepted as a band. Defaults to 2.5.
    min_peak_ratio: :class:`float`
        Smallest height above the median, as a fraction of the strongest
        peak's, accepted as a band. Defaults to 0.5.
    min_bands_required: :class:`int`
        Fewer detected bands make the pattern a ZSP. Defaults to 3.
    suppress_theta: :class:`int`
        Half width, in angle bins, of the neighbourhood cleared around a peak.
    suppress_rho: :class:`int`
        Half width, in offset bins, of the same neighbourhood.
    support_width: :class:`float`
        Width in pixels of the band support used for band contrast.
    unmatched_cost: :class:`float`
        Signature distance charged per band without a partner.
    max_distance: :class:`float`
        Patterns whose nearest library signature is farther than this are
        ZSPs. Defaults to 25.0.
    """

    __slots__ = (
        'n_theta',
        'n_rho',
        'min_line_fraction',
        'max_bands',
        'min_prominence',
        'min_peak_ratio',
        'min_bands_required',
        'suppress_theta',
        'suppress_rho',
        'support_width',
        'unmatched_cost',
        'max_distance',
    )

    def __init__(
        self,
        *,
        n_theta: int = 40,
        n_rho: int = 40,
        min_line_fraction: float = 0.5,
        max_bands: int = 11,
        min_prominence: float = 2.5,
        min_peak_ratio: float = 0.5,
        min_bands_required: int = 3,
        suppress_theta: int = 2,
        suppress_rho: int = 2,
        support_width: float = 3.0,
        unmatched_cost: float = 10.0,
        max_distance: float = 25.0,
    ):
        if n_theta < 8 or n_rho < 8:
            raise InvalidArgument(f'Hough resolution must be at least 8x8, not {n_theta}x{n_rho}')
        if max_bands < 1:
            raise InvalidArgument(f'max_bands must be at least 1, not {max_bands}')
        if min_bands_required < 0:
            raise InvalidArgument('min_bands_required must be nonnegative')
        if not 0.0 <= min_line_fraction <= 1.0:
            raise InvalidArgument(f'min_line_fraction must lie in [0, 1], not {min_line_fraction}')
        if not 0.0 <= min_peak_ratio <= 1.0:
            raise InvalidArgument(f'min_peak_ratio must lie in [0, 1], not {min_peak_ratio}')
        if suppress_theta < 0 or suppress_rho < 0:
            raise InvalidArgument('suppression half widths must be nonnegative')
        if support_width <= 0 or unmatched_cost < 0:
            raise InvalidArgument('support_width must be positive and unmatched_cost nonnegative')
        if max_distance < 0:
            raise InvalidArgument(f'max_distance must be nonnegative, not {max_distance}')

        self.n_theta = int(n_theta)
        self.n_rho = int(n_rho)
        self.min_line_fraction = float(min_line_fraction)
        self.max_bands = int(max_bands)
        self.min_prominence = float(min_prominence)
        self.min_peak_ratio = float(min_peak_ratio)
        self.min_bands_required = int(min_bands_required)
        self.suppress_theta = int(suppress_theta)
        self.suppress_rho = int(suppress_rho)
        self.support_width = float(support_width)
        self.unmatched_cost = float(unmatched_cost)
        self.max_distance = float(max_distance)

    def __repr__(self) -> str:
        return (
            f'<IndexingParams hough={self.n_theta}x{self.n_rho} max_bands={self.max_bands} '
            f'min_prominence={self.min_prominence} min_bands_required={self.min_bands_required}>'
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, IndexingParams) and self.to_dict() == other.to_dict()

    __hash__ = None  # type: ignore

    def to_dict(self) -> IndexingParamsPayload:
        return {name: getattr(self, name) for name in self.__slots__}  # type: ignore

    @classmethod
    def from_dict(cls, data: IndexingParamsPayload) -> Self:
        unknown = set(data) - set(cls.__slots__)
        if unknown:
            raise InvalidArgument(f'unknown indexing parameters: {", ".join(sorted(unknown))}')
        return cls(**data)

def _rho_max(height: int, width: int) -> float:
    return 0.5 * math.hypot(height, width)

def _detector_coords(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = np.mgrid[0:height, 0:width]
    x = cols - (width - 1) / 2.0
    y = rows - (height - 1) / 2.0
    return x.reshape(-1), y.reshape(-1)

@functools.lru_cache(maxsize=16)
def _hough_operator(height: int, width: int, n_theta: int, n_rho: int) -> sparse.csr_matrix:
    """The ``(n_theta·n_rho, N_d)`` 0/1 vote matrix of a detector."""
    x, y = _detector_coords(height, width)
    theta = np.arange(n_theta) * (np.pi / n_theta)
    rho_max = _rho_max(height, width)
    step = 2.0 * rho_max / n_rho

    rho = np.outer(np.cos(theta), x) + np.outer(np.sin(theta), y)
    bins = np.clip(np.floor((rho + rho_max) / step), 0, n_rho - 1).astype(np.int64)
    rows = (np.arange(n_theta)[:, None] * n_rho + bins).reshape(-1)
    cols = np.tile(np.arange(x.size), n_theta)
    ones = np.ones(rows.size)
    return sparse.csr_matrix((ones, (rows, cols)), shape=(n_theta * n_rho, x.size))

class HoughAccumulator:
    """Votes of one pattern over ``(θ, ρ)`` bins.

    Attributes
    -----------
    n_theta: :class:`int`
        Angle bins; bin ``i`` is the line angle ``i·π/n_theta``.
    n_rho: :class:`int`
        Offset bins over ``[-rho_max, rho_max]``.
    rho_max: :class:`float`
        Half the detector diagonal.
    bins: :class:`numpy.ndarray`
        ``(n_theta, n_rho)`` summed intensities.
    counts: :class:`numpy.ndarray`
        ``(n_theta, n_rho)`` number of pixels voting into each bin.
    """

    __slots__ = ('n_theta', 'n_rho', 'rho_max', 'bins', 'counts')

    def __init__(self, bins: np.ndarray, counts: np.ndarray, rho_max: float):
        bins = np.asarray(bins, dtype=np.float64)
        counts = np.asarray(counts, dtype=np.float64)
        if bins.ndim != 2 or bins.shape != counts.shape:
            raise ShapeMismatch('accumulator bins and counts disagree', expected=counts.shape, received=bins.shape)
        if not np.all(np.isfinite(bins)):
            raise InvalidArgument('accumulator bins must be finite')
        self.n_theta, self.n_rho = bins.shape
        self.rho_max = float(rho_max)
        self.bins = bins
        self.counts = counts

    def __repr__(self) -> str:
        return f'<HoughAccumulator n_theta={self.n_theta} n_rho={self.n_rho}>'

    @property
    def rho_step(self) -> float:
        return 2.0 * self.rho_max / self.n_rho

    def theta_of(self, i: int) -> float:
        return float(i * (np.pi / self.n_theta))

    def rho_of(self, j: int) -> float:
        """Centre of offset bin ``j``."""
        return float(-self.rho_max + (j + 0.5) * self.rho_step)

    def normalized(self, min_line_fraction: float = 0.25) -> np.ndarray:
        """Mean intensity per bin.

        Bins whose line is shorter than ``min_line_fraction`` of the longest
        line are ``NaN``.
        """
        out = np.full(self.bins.shape, np.nan)
        longest = self.counts.max()
        if longest == 0:
            return out
        valid = (self.counts > 0) & (self.counts >= min_line_fraction * longest)
        out[valid] = self.bins[valid] / self.counts[valid]
        return out

def hough_transform(p: Pattern, n_theta: int = 40, n_rho: int = 40) -> HoughAccumulator:
    """Accumulate ``p`` over ``(θ, ρ)`` line bins.

    ``θ`` takes ``n_theta`` values ``i·π/n_theta`` and ``ρ`` is split into
    ``n_rho`` equal bins over ``[-ρ_max, ρ_max]``, ``ρ_max`` being half the
    detector diagonal. Each pixel votes once per angle, so the accumulator
    mass is ``n_theta`` times the pattern sum.

    Raises
    -------
    InvalidArgument
        ``n_theta`` or ``n_rho`` is below 8.
    """
    if n_theta < 8 or n_rho < 8:
        raise InvalidArgument(f'Hough resolution must be at least 8x8, not {n_theta}x{n_rho}')
    op = _hough_operator(p.height, p.width, n_theta, n_rho)
    bins = op @ p.intensities.astype(np.float64)
    counts = _line_lengths(p.height, p.width, n_theta, n_rho)
    return HoughAccumulator(bins.reshape(n_theta, n_rho), counts, _rho_max(p.height, p.width))

@functools.lru_cache(maxsize=16)
def _line_lengths(height: int, width: int, n_theta: int, n_rho: int) -> np.ndarray:
    op = _hough_operator(height, width, n_theta, n_rho)
    counts = np.asarray(op.sum(axis=1)).reshape(n_theta, n_rho)
    counts.setflags(write=False)
    return counts

class Band(NamedTuple):
    """A detected band: the line parameters and bin of its Hough peak."""

    theta: float
    rho: float
    theta_bin: int
    rho_bin: int
    prominence: float

def _suppress(work: np.ndarray, i: int, j: int, dt: int, dr: int) -> None:
    n_theta, n_rho = work.shape
    for di in range(-dt, dt + 1):
        row = i + di
        col = j
        # Past either end of [0, π) a line reappears with its offset negated.
        if row < 0 or row >= n_theta:
            row %= n_theta
            col = n_rho - 1 - j
        work[row, max(col - dr, 0):col + dr + 1] = np.nan

def detect_bands(
    acc: HoughAccumulator,
    max_bands: int = 11,
    min_prominence: float = 2.5,
    *,
    min_peak_ratio: float = 0.0,
    min_line_fraction: float = 0.25,
    suppress_theta: int = 2,
    suppress_rho: int = 2,
) -> List[Band]:
    """Greedy peak picking on the normalized accumulator.

    Repeatedly takes the largest remaining bin, records it as a band and
    clears a ``(±suppress_theta, ±suppress_rho)`` neighbourhood around it.
    Stops after ``max_bands`` bands or when the peak's prominence,
    ``(peak - median) / std`` over all valid bins, falls below
    ``min_prominence``, or its height above the median falls below
    ``min_peak_ratio`` times that of the first peak. Bands come out strongest
    first.
    """
    if max_bands < 1:
        raise InvalidArgument(f'max_bands must be at least 1, not {max_bands}')

    work = acc.normalized(min_line_fraction)
    valid = work[np.isfinite(work)]
    if valid.size == 0:
        return []
    median = float(np.median(valid))
    spread = float(valid.std())
    if spread == 0.0:
        return []

    bands: List[Band] = []
    floor = -math.inf
    while len(bands) < max_bands and np.isfinite(work).any():
        flat = int(np.nanargmax(work))
        i, j = divmod(flat, acc.n_rho)
        height = float(work[i, j]) - median
        prominence = height / spread
        if prominence < min_prominence or height < floor:
            break
        if not bands:
            floor = min_peak_ratio * height
        bands.append(Band(acc.theta_of(i), acc.rho_of(j), i, j, prominence))
        _suppress(work, i, j, suppress_theta, suppress_rho)
    return bands

def band_contrast(p: Pattern, bands: Sequence[Band], support_width: float = 3.0) -> float:
    """Mean intensity on the band support minus the mean elsewhere, at least 0.

    The support is every pixel within ``support_width / 2`` of a band line.
    """
    if not bands:
        return 0.0
    x, y = _detector_coords(p.height, p.width)
    support = np.zeros(x.size, dtype=bool)
    for band in bands:
        support |= np.abs(x * np.cos(band.theta) + y * np.sin(band.theta) - band.rho) <= support_width / 2.0
    if support.all() or not support.any():
        return 0.0
    values = p.intensities.astype(np.float64)
    return max(0.0, float(values[support].mean() - values[~support].mean()))

def signature_of(bands: Sequence[Band]) -> Signature:
    """The sorted ``(theta_bin, rho_bin)`` pairs of ``bands``."""
    return tuple(sorted((int(b.theta_bin), int(b.rho_bin)) for b in bands))

def signature_distance(a: Signature, b: Signature, n_theta: int, n_rho: int, unmatched_cost: float = 10.0) -> float:
    """Optimal-alignment distance between two band signatures, in bins.

    Bands are paired by a minimum-cost assignment where the cost of a pair
    is the sum of absolute bin differences, taking the shorter way around
    the angle wrap (a line at ``θ + π`` has offset ``-ρ``). Every band left
    without a partner costs ``unmatched_cost``.
    """
    if not a or not b:
        return unmatched_cost * (len(a) + len(b))
    pa = np.asarray(a, dtype=np.float64)
    pb = np.asarray(b, dtype=np.float64)
    dt = pa[:, None, 0] - pb[None, :, 0]
    direct = np.abs(dt) + np.abs(pa[:, None, 1] - pb[None, :, 1])
    wrapped = n_theta - np.abs(dt) + np.abs(pa[:, None, 1] - (n_rho - 1 - pb[None, :, 1]))
    cost = np.minimum(direct, wrapped)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum()) + unmatched_cost * abs(len(a) - len(b))

class OrientationLibrary:
    """Orientations and the band signatures they produce.

    .. container:: operations

        .. describe:: len(x)

            Returns the number of entries.

    Attributes
    -----------
    orientations: :class:`numpy.ndarray`
        ``(n, 3)`` orientation triples.
    signatures: List[Tuple[Tuple[:class:`int`, :class:`int`], ...]]
        The signature of each entry, pairwise distinct.
    n_theta: :class:`int`
        Hough angle resolution the signatures were taken at.
    n_rho: :class:`int`
        Hough offset resolution the signatures were taken at.
    """

    __slots__ = ('orientations', 'signatures', 'n_theta', 'n_rho', '_lookup')

    def __init__(self, orientations: np.ndarray, signatures: Sequence[Signature], n_theta: int, n_rho: int):
        orientations = np.array(orientations, dtype=np.float64).reshape(-1, 3)
        signatures = [tuple((int(t), int(r)) for t, r in s) for s in signatures]
        if len(orientations) == 0:
            raise InvalidArgument('an orientation library needs at least one entry')
        if len(signatures) != len(orientations):
            raise ShapeMismatch('one signature per orientation is required', expected=len(orientations), received=len(signatures))

        lookup: Dict[Signature, int] = {}
        for index, signature in enumerate(signatures):
            signature = tuple(sorted(signature))
            if signature in lookup:
                raise InvalidArgument(f'library entries {lookup[signature]} and {index} share the signature {signature}')
            lookup[signature] = index

        orientations.setflags(write=False)
        self.orientations = orientations
        self.signatures = [tuple(sorted(s)) for s in signatures]
        self.n_theta = int(n_theta)
        self.n_rho = int(n_rho)
        self._lookup = lookup

    def __repr__(self) -> str:
        return f'<OrientationLibrary entries={len(self)} hough={self.n_theta}x{self.n_rho}>'

    def __len__(self) -> int:
        return len(self.signatures)

    def nearest(self, signature: Signature, unmatched_cost: float = 10.0) -> Tuple[int, float]:
        """Index of the entry closest to ``signature`` and its distance.

        Ties go to the lower index.
        """
        exact = self._lookup.get(tuple(sorted(signature)))
        if exact is not None:
            return exact, 0.0
        distances = [signature_distance(signature, s, self.n_theta, self.n_rho, unmatched_cost) for s in self.signatures]
        best = int(np.argmin(distances))
        return best, float(distances[best])

def build_library(
    orientations: np.ndarray,
    pattern_params: Optional[PatternParams] = None,
    indexing_params: Optional[IndexingParams] = None,
    *,
    decoys: int = 0,
    seed: int = 0,
) -> OrientationLibrary:
    """Build a library whose signatures are the detector's own output on the
    noiseless pattern of each orientation.

    ``decoys`` extra random orientations, drawn from ``seed``, are appended so
    that noisy patterns can be matched to an orientation absent from the map.
    Decoys whose signature collides with an earlier entry are redrawn.

    Raises
    -------
    InvalidArgument
        Two of the given orientations produce the same signature.
    """
    pattern_params = pattern_params or PatternParams()
    indexing_params = indexing_params or IndexingParams()
    orientations = np.asarray(orientations, dtype=np.float64).reshape(-1, 3)

    def signature(orientation: np.ndarray) -> Signature:
        bands = _detect(render(orientation, pattern_params), indexing_params)
        return signature_of(bands)

    signatures = parallel_map(signature, list(orientations))
    library = OrientationLibrary(orientations, signatures, indexing_params.n_theta, indexing_params.n_rho)
    if decoys <= 0:
        return library

    rng = derive_rng(seed, 0xDEC0)
    entries = list(orientations)
    seen = set(library.signatures)
    attempts = 0
    while len(entries) < len(orientations) + decoys:
        attempts += 1
        if attempts > 100 * decoys:
            log.warning(f'Only {len(entries) - len(orientations)} of {decoys} decoys have distinct signatures.')
            break
        candidate = rng.uniform(0.05, 1.0, size=3)
        s = signature(candidate)
        if s in seen:
            continue
        seen.add(s)
        entries.append(candidate)
        signatures.append(s)
    return OrientationLibrary(np.array(entries), signatures, indexing_params.n_theta, indexing_params.n_rho)

class IndexingResult(NamedTuple):
    """The outcome of indexing one pattern.

    A ZSP carries its band contrast but no orientation.
    """

    band_contrast: float
    orientation: Optional[Tuple[float, float, float]]
    n_bands_found: int
    distance: float = math.inf

    @property
    def is_zsp(self) -> bool:
        return self.orientation is None

def _detect(p: Pattern, params: IndexingParams, acc: Optional[HoughAccumulator] = None) -> List[Band]:
    if acc is None:
        acc = hough_transform(p, params.n_theta, params.n_rho)
    return detect_bands(
        acc,
        params.max_bands,
        params.min_prominence,
        min_peak_ratio=params.min_peak_ratio,
        min_line_fraction=params.min_line_fraction,
        suppress_theta=params.suppress_theta,
        suppress_rho=params.suppress_rho,
    )

def _check_resolution(lib: OrientationLibrary, params: IndexingParams) -> None:
    if (lib.n_theta, lib.n_rho) != (params.n_theta, params.n_rho):
        raise ShapeMismatch(
            'library and indexer use different Hough resolutions',
            expected=(lib.n_theta, lib.n_rho),
            received=(params.n_theta, params.n_rho),
        )

def _index_bands(p: Pattern, bands: List[Band], lib: OrientationLibrary, params: IndexingParams) -> IndexingResult:
    contrast = band_contrast(p, bands, params.support_width)
    if len(bands) < params.min_bands_required:
        return IndexingResult(contrast, None, len(bands))
    entry, distance = lib.nearest(signature_of(bands), params.unmatched_cost)
    if distance > params.max_distance:
        return IndexingResult(contrast, None, len(bands), distance)
    orientation = tuple(float(v) for v in lib.orientations[entry])
    return IndexingResult(contrast, orientation, len(bands), distance)  # type: ignore

def index_pattern(p: Pattern, lib: OrientationLibrary, params: Optional[IndexingParams] = None) -> IndexingResult:
    """Index one pattern.

    Fewer than ``min_bands_required`` detected bands give a ZSP, as does a
    nearest library signature farther than ``max_distance``. Otherwise the
    orientation of that library entry is returned.
    """
    params = params or IndexingParams()
    _check_resolution(lib, params)
    return _index_bands(p, _detect(p, params), lib, params)

class IndexedMaps(NamedTuple):
    """Maps produced by indexing a stack.

    ``mask`` is the stack's mask with the ZSPs removed from the sampled set
    and recorded as ZSPs.
    """

    band_contrast: ScalarMap
    ipf: RgbMap
    mask: SampleMask
    hit_rate: float

    @property
    def hit_rate_sampled(self) -> float:
        """``1 - |Ω_zsp| / |Ω|`` over the positions that were sampled."""
        sampled = self.mask.count + self.mask.zsp.size
        return 1.0 - self.mask.zsp.size / sampled if sampled else 1.0

def index_stack(stack: PatternStack, lib: OrientationLibrary, params: Optional[IndexingParams] = None) -> IndexedMaps:
    """Index every pattern of ``stack`` into band-contrast and IPF maps.

    Unsampled positions are 0 in both maps and ZSPs are 0 in the IPF map.
    The hit rate is ``1 - |Ω_zsp| / N_p``.
    """
    params = params or IndexingParams()
    _check_resolution(lib, params)

    grid = stack.grid
    height, width = stack.pattern_shape
    op = _hough_operator(height, width, params.n_theta, params.n_rho)
    counts = _line_lengths(height, width, params.n_theta, params.n_rho)
    rho_max = _rho_max(height, width)
    sampled = stack.mask.sampled

    contrast = np.zeros(grid.count)
    colours = np.zeros((3, grid.count))
    failed = np.zeros(len(stack), dtype=bool)

    def work(rows: slice) -> None:
        votes = (op @ stack.data[rows].astype(np.float64).T).T
        for offset, i in enumerate(range(rows.start, rows.stop)):
            p = stack[i]
            acc = HoughAccumulator(votes[offset].reshape(params.n_theta, params.n_rho), counts, rho_max)
            result = _index_bands(p, _detect(p, params, acc), lib, params)
            contrast[sampled[i]] = result.band_contrast
            if result.is_zsp:
                failed[i] = True
            else:
                colours[:, sampled[i]] = result.orientation

    parallel_map(work, list(chunked(len(stack), 256)))

    zsp = as_index_set(sampled[failed])
    mask = merge_zsp(stack.mask, zsp)
    hr = hit_rate(zsp.size, grid.count)
    log.debug(f'Indexed {len(stack)} patterns: {zsp.size} ZSPs, hit rate {hr:.4f}.')
    return IndexedMaps(ScalarMap(grid, contrast), RgbMap(grid, colours), mask, hr)
