"""
Synthetic microstructures and diffraction patterns.

A phantom is a Voronoi tessellation of the probe grid into grains. Each
grain carries an orientation triple in ``[0, 1]^3`` which doubles as its IPF
colour and as the parameter of its synthetic diffraction pattern.

Patterns are a constant background of 1.0 plus straight, flat-topped bright
bands. Band ``k`` of ``n`` for orientation ``(o0, o1, o2)`` is the set of
detector pixels whose centred coordinates satisfy
``|x cos θ_k + y sin θ_k - ρ_k| <= band_width / 2`` with

    θ_k = π · frac(o0 + (k + 0.3 · sin(2π (o1 + k o2))) / n)
    ρ_k = f · ρ_max · sin(2π (o2 + (k + 1)(o0 + o1)))

where ``ρ_max`` is half the detector diagonal and ``f`` is
:attr:`PatternParams.rho_fraction`. When lattice steps are given, θ is rounded
to a multiple of ``π / theta_steps`` and ρ to the centre of one of
``rho_steps`` equal bins over ``[-ρ_max, ρ_max]``, which puts noiseless bands
exactly on the bins of a Hough accumulator of that resolution. Overlapping
bands do not add up; a pixel inside any band has intensity ``1 + amplitude``.
"""
from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgument, ShapeMismatch
from .grid import ProbeGrid, SampleMask
from .maps import RgbMap, ScalarMap
from .mixins import GridBound
from .utils import parallel_map

if TYPE_CHECKING:
    from typing_extensions import Self

    from .types.config import PatternParams as PatternParamsPayload
    from .types.phantom import Grains as GrainsPayload

__all__ = (
    'GrainMap',
    'Pattern',
    'PatternStack',
    'PatternParams',
    'voronoi_phantom',
    'voronoi_labels',
    'phantom_maps',
    'boundary_pixels',
    'band_geometry',
    'render_bands',
    'render',
    'synth_pattern',
    'synth_stack',
)

log = logging.getLogger(__name__)

PATTERN_DTYPE = np.float32

# Orientations are drawn away from black so that no grain is mistaken for a ZSP.
_ORIENTATION_FLOOR = 0.05

class GrainMap(GridBound):
    """A labelled microstructure.

    Attributes
    -----------
    grid: :class:`ProbeGrid`
        The probe grid.
    labels: :class:`numpy.ndarray`
        Grain id of every probe position, row-major.
    orientations: :class:`numpy.ndarray`
        ``(n_grains, 3)`` array of pairwise distinct orientation triples.
    """

    __slots__ = ('grid', 'labels', 'orientations')

    def __init__(self, grid: ProbeGrid, labels: Sequence[int], orientations: np.ndarray):
        labels = np.array(labels, dtype=np.int64).reshape(-1)
        orientations = np.array(orientations, dtype=np.float64).reshape(-1, 3)
        if labels.size != grid.count:
            raise ShapeMismatch('grain labels do not cover the grid', expected=grid.count, received=labels.size)
        if labels.min() < 0 or labels.max() >= len(orientations):
            raise InvalidArgument('grain labels must index the orientation table')
        if np.unique(orientations, axis=0).shape[0] != orientations.shape[0]:
            raise InvalidArgument('grain orientations must be pairwise distinct')
        if orientations.min() < 0.0 or orientations.max() > 1.0:
            raise InvalidArgument('grain orientations must lie in [0, 1]')

        labels.setflags(write=False)
        orientations.setflags(write=False)
        self.grid = grid
        self.labels = labels
        self.orientations = orientations

    def __repr__(self) -> str:
        return f'<GrainMap grid={self.grid.shape} n_grains={self.n_grains}>'

    @property
    def n_grains(self) -> int:
        return int(self.orientations.shape[0])

    def orientation_at(self, index: int) -> Tuple[float, float, float]:
        """The orientation triple of the grain containing probe ``index``."""
        return tuple(float(v) for v in self.orientations[self.labels[index]])

    def to_dict(self) -> GrainsPayload:
        return {
            'height': self.grid.height,
            'width': self.grid.width,
            'labels': [int(v) for v in self.labels],
            'orientations': [[float(v) for v in row] for row in self.orientations],
        }

    @classmethod
    def from_dict(cls, data: GrainsPayload) -> Self:
        try:
            return cls(ProbeGrid(data['height'], data['width']), data['labels'], data['orientations'])
        except KeyError as e:
            raise InvalidArgument(f'grain document is missing {e.args[0]!r}') from e

def voronoi_labels(grid: ProbeGrid, sites: np.ndarray) -> np.ndarray:
    """Label every pixel with its nearest site.

    Sites are ``(row, col)`` pixel coordinates; distances are Euclidean
    between pixel centres, ties go to the lower site index.
    """
    sites = np.asarray(sites, dtype=np.int64).reshape(-1, 2)
    rows, cols = np.divmod(np.arange(grid.count, dtype=np.int64), grid.width)
    pixels = np.column_stack((rows, cols))

    k = min(len(sites), 8)
    tree = cKDTree(sites)
    _, candidates = tree.query(pixels, k=k)
    candidates = candidates.reshape(grid.count, k)

    # Integer squared distances make ties exact.
    d2 = ((pixels[:, None, :] - sites[candidates]) ** 2).sum(axis=2)
    order = np.lexsort((candidates, d2), axis=1)
    best = np.take_along_axis(candidates, order[:, :1], axis=1)[:, 0]

    # A tie may reach past the k-th candidate; settle those rows exhaustively.
    if k < len(sites):
        kth = d2.max(axis=1)
        closest = d2.min(axis=1)
        unsure = np.flatnonzero(kth == closest)
        if unsure.size:
            full = ((pixels[unsure, None, :] - sites[None, :, :]) ** 2).sum(axis=2)
            best[unsure] = full.argmin(axis=1)
    return best

def voronoi_phantom(grid: ProbeGrid, n_grains: int, seed: int) -> GrainMap:
    """Generate a Voronoi microstructure of ``n_grains`` grains.

    Sites are distinct pixels drawn from ``seed``, numbered in ascending
    probe order. Orientations are drawn from the same stream, pairwise
    distinct and kept apart in every component where the grain count allows.

    Raises
    -------
    InvalidArgument
        ``n_grains`` is not in ``[1, N_p]``.
    """
    if not 1 <= n_grains <= grid.count:
        raise InvalidArgument(f'n_grains must lie in [1, {grid.count}], not {n_grains}')

    rng = np.random.default_rng(seed)
    site_index = np.sort(rng.choice(grid.count, size=n_grains, replace=False))
    sites = np.column_stack(np.divmod(site_index, grid.width))
    labels = voronoi_labels(grid, sites)
    orientations = _draw_orientations(rng, n_grains)

    log.debug(f'Voronoi phantom {grid.shape} with {n_grains} grains from seed {seed}.')
    return GrainMap(grid, labels, orientations)

def _draw_orientations(rng: np.random.Generator, n: int) -> np.ndarray:
    separation = min(0.15, 0.5 / n ** (1 / 3))
    accepted = np.empty((0, 3))
    misses = 0
    while len(accepted) < n:
        candidate = rng.uniform(_ORIENTATION_FLOOR, 1.0, size=3)
        if len(accepted) == 0 or np.abs(accepted - candidate).max(axis=1).min() >= separation:
            accepted = np.vstack((accepted, candidate))
            misses = 0
            continue
        misses += 1
        if misses >= 1000:
            separation /= 2
            misses = 0
    return accepted

def boundary_pixels(gm: GrainMap) -> np.ndarray:
    """Boolean vector marking pixels with a 4-neighbour in another grain."""
    labels = gm.labels.reshape(gm.grid.shape)
    boundary = np.zeros(gm.grid.shape, dtype=bool)
    vertical = labels[1:, :] != labels[:-1, :]
    horizontal = labels[:, 1:] != labels[:, :-1]
    boundary[1:, :] |= vertical
    boundary[:-1, :] |= vertical
    boundary[:, 1:] |= horizontal
    boundary[:, :-1] |= horizontal
    return boundary.reshape(-1)

def phantom_maps(gm: GrainMap, boundary_contrast: float = 0.5) -> Tuple[ScalarMap, RgbMap]:
    """Reference band-contrast and IPF maps of a phantom.

    Band contrast is 1.0 inside grains and ``boundary_contrast`` on
    boundary pixels. The IPF map colours each pixel with its grain's
    orientation triple.
    """
    if not 0.0 <= boundary_contrast <= 1.0:
        raise InvalidArgument(f'boundary_contrast must lie in [0, 1], not {boundary_contrast}')

    contrast = np.where(boundary_pixels(gm), float(boundary_contrast), 1.0)
    colours = gm.orientations[gm.labels].T
    return ScalarMap(gm.grid, contrast), RgbMap(gm.grid, colours)

class Pattern:
    """A single diffraction pattern.

    Attributes
    -----------
    height: :class:`int`
        Detector rows ``H_d``.
    width: :class:`int`
        Detector columns ``W_d``.
    intensities: :class:`numpy.ndarray`
        Read-only ``float32`` vector of ``N_d`` intensities, row-major.
        Synthesised patterns are nonnegative; Gaussian-corrupted ones may not be.
    """

    __slots__ = ('height', 'width', 'intensities')

    def __init__(self, height: int, width: int, intensities: Sequence[float]):
        intensities = np.array(intensities, dtype=PATTERN_DTYPE).reshape(-1)
        if intensities.size != height * width:
            raise ShapeMismatch('pattern intensities do not fill the detector', expected=height * width, received=intensities.size)
        if not np.all(np.isfinite(intensities)):
            raise InvalidArgument('pattern intensities must be finite')
        intensities.setflags(write=False)
        self.height = int(height)
        self.width = int(width)
        self.intensities = intensities

    def __repr__(self) -> str:
        return f'<Pattern height={self.height} width={self.width}>'

    def __eq__(self, other) -> bool:
        return isinstance(other, Pattern) and self.shape == other.shape and np.array_equal(self.intensities, other.intensities)

    __hash__ = None  # type: ignore

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.height * self.width

    def to_image(self) -> np.ndarray:
        return self.intensities.reshape(self.shape)

class PatternParams:
    """How patterns are rendered.

    Parameters
    -----------
    height: :class:`int`
        Detector rows. Defaults to 48.
    width: :class:`int`
        Detector columns. Defaults to 64.
    n_bands: :class:`int`
        Bands per pattern. Defaults to 4.
    band_width: :class:`float`
        Full band width in detector pixels. Defaults to 3.0.
    amplitude: :class:`float`
        Band intensity above the background. Defaults to 1.0.
    rho_fraction: :class:`float`
        Largest band offset as a fraction of the half diagonal. Defaults to 0.4.
    theta_steps: :class:`int`
        Angular lattice bands are snapped to, 0 for none. Defaults to 40.
    rho_steps: :class:`int`
        Offset lattice bands are snapped to, 0 for none. Defaults to 40.
    """

    __slots__ = ('height', 'width', 'n_bands', 'band_width', 'amplitude', 'rho_fraction', 'theta_steps', 'rho_steps')

    def __init__(
        self,
        *,
        height: int = 48,
        width: int = 64,
        n_bands: int = 4,
        band_width: float = 3.0,
        amplitude: float = 1.0,
        rho_fraction: float = 0.4,
        theta_steps: int = 40,
        rho_steps: int = 40,
    ):
        if height < 1 or width < 1:
            raise InvalidArgument(f'pattern must be at least 1x1, not {height}x{width}')
        if n_bands < 1:
            raise InvalidArgument(f'n_bands must be at least 1, not {n_bands}')
        if band_width <= 0:
            raise InvalidArgument(f'band_width must be positive, not {band_width}')
        if amplitude < 0:
            raise InvalidArgument(f'amplitude must be nonnegative, not {amplitude}')
        if not 0.0 <= rho_fraction <= 1.0:
            raise InvalidArgument(f'rho_fraction must lie in [0, 1], not {rho_fraction}')
        if theta_steps < 0 or rho_steps < 0:
            raise InvalidArgument('lattice steps must be nonnegative')
        self.height = int(height)
        self.width = int(width)
        self.n_bands = int(n_bands)
        self.band_width = float(band_width)
        self.amplitude = float(amplitude)
        self.rho_fraction = float(rho_fraction)
        self.theta_steps = int(theta_steps)
        self.rho_steps = int(rho_steps)

    def __repr__(self) -> str:
        return (
            f'<PatternParams shape={self.height}x{self.width} n_bands={self.n_bands} '
            f'band_width={self.band_width} amplitude={self.amplitude}>'
        )

    def to_dict(self) -> PatternParamsPayload:
        return {name: getattr(self, name) for name in self.__slots__}  # type: ignore

    @classmethod
    def from_dict(cls, data: PatternParamsPayload) -> Self:
        unknown = set(data) - set(cls.__slots__)
        if unknown:
            raise InvalidArgument(f'unknown pattern parameters: {", ".join(sorted(unknown))}')
        return cls(**data)

def _centred_coords(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = np.mgrid[0:height, 0:width]
    return cols - (width - 1) / 2.0, rows - (height - 1) / 2.0

def band_geometry(
    orientation: Sequence[float],
    height: int,
    width: int,
    n_bands: int,
    rho_fraction: float = 0.4,
    *,
    theta_steps: int = 0,
    rho_steps: int = 0,
) -> np.ndarray:
    """The ``(n_bands, 2)`` array of band ``(θ, ρ)`` for an orientation.

    θ lies in ``[0, π)``; ρ is in detector pixels from the pattern centre.
    Zero steps leave the corresponding parameter continuous.
    """
    o0, o1, o2 = (float(v) for v in orientation)
    k = np.arange(n_bands, dtype=np.float64)
    rho_max = 0.5 * np.hypot(height, width)
    theta = np.pi * np.mod(o0 + (k + 0.3 * np.sin(2 * np.pi * (o1 + k * o2))) / n_bands, 1.0)
    rho = rho_fraction * rho_max * np.sin(2 * np.pi * (o2 + (k + 1) * (o0 + o1)))
    if theta_steps:
        theta = np.mod(np.round(theta * theta_steps / np.pi), theta_steps) * (np.pi / theta_steps)
    if rho_steps:
        step = 2.0 * rho_max / rho_steps
        bins = np.clip(np.floor((rho + rho_max) / step), 0, rho_steps - 1)
        rho = -rho_max + (bins + 0.5) * step
    return np.column_stack((theta, rho))

def render_bands(bands: np.ndarray, height: int, width: int, band_width: float, amplitude: float) -> np.ndarray:
    """Render flat-topped bands given as ``(θ, ρ)`` rows over a background of 1.0."""
    x, y = _centred_coords(height, width)
    inside = np.zeros((height, width), dtype=bool)
    for theta, rho in np.asarray(bands, dtype=np.float64).reshape(-1, 2):
        inside |= np.abs(x * np.cos(theta) + y * np.sin(theta) - rho) <= band_width / 2.0
    return (1.0 + amplitude * inside).reshape(-1)

def synth_pattern(
    orientation: Sequence[float],
    height: int,
    width: int,
    n_bands: int,
    band_width: float,
    amplitude: float,
    *,
    rho_fraction: float = 0.4,
    theta_steps: int = 0,
    rho_steps: int = 0,
) -> Pattern:
    """Render the noiseless pattern of ``orientation``.

    The result is a deterministic function of its arguments; see the module
    documentation for the band law.
    """
    if n_bands < 1:
        raise InvalidArgument(f'n_bands must be at least 1, not {n_bands}')
    if band_width <= 0:
        raise InvalidArgument(f'band_width must be positive, not {band_width}')
    bands = band_geometry(orientation, height, width, n_bands, rho_fraction, theta_steps=theta_steps, rho_steps=rho_steps)
    return Pattern(height, width, render_bands(bands, height, width, band_width, amplitude))

def render(orientation: Sequence[float], params: PatternParams, *, amplitude: Optional[float] = None) -> Pattern:
    """:func:`synth_pattern` with the settings of ``params``.

    ``amplitude`` overrides :attr:`PatternParams.amplitude`.
    """
    return synth_pattern(
        orientation,
        params.height,
        params.width,
        params.n_bands,
        params.band_width,
        params.amplitude if amplitude is None else amplitude,
        rho_fraction=params.rho_fraction,
        theta_steps=params.theta_steps,
        rho_steps=params.rho_steps,
    )

class PatternStack(GridBound):
    """Patterns recorded at the sampled positions of a mask.

    Row ``i`` of :attr:`data` is the pattern of probe ``mask.sampled[i]``.

    .. container:: operations

        .. describe:: len(x)

            Returns the number of patterns.

        .. describe:: x[i]

            Returns the ``i``-th pattern as a :class:`Pattern`.

    Attributes
    -----------
    grid: :class:`ProbeGrid`
        The probe grid.
    mask: :class:`SampleMask`
        The sampled positions, in the order of :attr:`data`.
    pattern_shape: Tuple[:class:`int`, :class:`int`]
        ``(H_d, W_d)``.
    data: :class:`numpy.ndarray`
        Read-only ``(|Ω|, N_d)`` ``float32`` array.
    """

    __slots__ = ('grid', 'mask', 'pattern_shape', 'data')

    def __init__(self, mask: SampleMask, pattern_shape: Tuple[int, int], data: np.ndarray):
        height, width = (int(v) for v in pattern_shape)
        data = np.asarray(data, dtype=PATTERN_DTYPE).reshape(-1, height * width) if np.size(data) else np.empty((0, height * width), dtype=PATTERN_DTYPE)
        if data.shape[0] != mask.count:
            raise ShapeMismatch('one pattern per sampled position is required', expected=mask.count, received=data.shape[0])
        if not data.flags.writeable:
            data = data.copy()
        data.setflags(write=False)
        self.grid = mask.grid
        self.mask = mask
        self.pattern_shape = (height, width)
        self.data = data

    def __repr__(self) -> str:
        return f'<PatternStack grid={self.grid.shape} patterns={len(self)} pattern_shape={self.pattern_shape}>'

    def __len__(self) -> int:
        return int(self.data.shape[0])

    def __getitem__(self, i: int) -> Pattern:
        return Pattern(*self.pattern_shape, self.data[i])

    def __iter__(self) -> Iterator[Pattern]:
        for i in range(len(self)):
            yield self[i]

    def pattern_at(self, probe_index: int) -> Pattern:
        """The pattern recorded at ``probe_index``.

        Raises
        -------
        KeyError
            The position was not sampled.
        """
        pos = int(np.searchsorted(self.mask.sampled, probe_index))
        if pos >= self.mask.count or self.mask.sampled[pos] != probe_index:
            raise KeyError(probe_index)
        return self[pos]

    def with_data(self, data: np.ndarray) -> PatternStack:
        """A stack with the same layout holding ``data``."""
        return PatternStack(self.mask, self.pattern_shape, data)

def synth_stack(
    gm: GrainMap,
    mask: SampleMask,
    params: Optional[PatternParams] = None,
    *,
    modulation: Optional[ScalarMap] = None,
) -> PatternStack:
    """Synthesise the noiseless pattern of every sampled position.

    Parameters
    -----------
    gm: :class:`GrainMap`
        Source of each position's orientation.
    mask: :class:`SampleMask`
        The positions to synthesise, in ascending order.
    params: Optional[:class:`PatternParams`]
        Rendering parameters; defaults apply when omitted.
    modulation: Optional[:class:`ScalarMap`]
        Per-position factor applied to the band amplitude, typically the
        phantom's band-contrast reference so that boundary patterns are
        weaker.

    Raises
    -------
    ShapeMismatch
        ``mask`` or ``modulation`` lies on a different grid than ``gm``.
    """
    params = params or PatternParams()
    gm._require_grid(mask, 'mask')
    if modulation is not None:
        gm._require_grid(modulation, 'modulation')

    sampled = mask.sampled
    labels = gm.labels[sampled]
    factors = modulation.values[sampled] if modulation is not None else np.ones(sampled.size)

    # Patterns depend only on (grain, amplitude), so each distinct pair is rendered once.
    keys = np.column_stack((labels.astype(np.float64), factors)) if sampled.size else np.empty((0, 2))
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)

    def draw(key: np.ndarray) -> np.ndarray:
        label, factor = int(key[0]), float(key[1])
        return render(gm.orientations[label], params, amplitude=params.amplitude * factor).intensities

    table = parallel_map(draw, list(unique))
    shape = (params.height, params.width)
    if not table:
        return PatternStack(mask, shape, np.empty((0, params.height * params.width), dtype=PATTERN_DTYPE))

    data = np.stack(table)[np.asarray(inverse).reshape(-1)]
    log.debug(f'Synthesised {len(data)} patterns from {len(table)} distinct renders.')
    return PatternStack(mask, shape, data)
