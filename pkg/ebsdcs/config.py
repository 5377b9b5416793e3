from __future__ import annotations

import csv
import logging
import math
import os
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Union

import yaml

from .bpfa import BpfaParams
from .enums import MapKind, NoiseKind, SamplingStrategy, to_enum
from .errors import FormatError, InvalidArgument
from .indexing import IndexingParams
from .noise import NoiseSpec
from .phantom import PatternParams
from .utils import config_hash

if TYPE_CHECKING:
    from typing_extensions import Self

    from .types.config import ExperimentConfig as ExperimentConfigPayload
    from .types.config import PhantomParams as PhantomParamsPayload

__all__ = (
    'PhantomParams',
    'ExperimentConfig',
    'ResultRow',
    'CSV_COLUMNS',
    'write_results',
    'read_results',
)

log = logging.getLogger(__name__)

class PhantomParams:
    """Size and grain count of the experiment phantom.

    Parameters
    -----------
    height: :class:`int`
        Probe rows. Defaults to 128.
    width: :class:`int`
        Probe columns. Defaults to 128.
    n_grains: :class:`int`
        Voronoi grains. Defaults to 8.
    boundary_contrast: :class:`float`
        Band contrast of boundary pixels in the reference. Defaults to 0.5.
    """

    __slots__ = ('height', 'width', 'n_grains', 'boundary_contrast')

    def __init__(self, *, height: int = 128, width: int = 128, n_grains: int = 8, boundary_contrast: float = 0.5):
        if height < 1 or width < 1 or not 1 <= n_grains <= height * width:
            raise InvalidArgument(f'invalid phantom {height}x{width} with {n_grains} grains')
        if not 0.0 <= boundary_contrast <= 1.0:
            raise InvalidArgument(f'boundary_contrast must lie in [0, 1], not {boundary_contrast}')
        self.height = int(height)
        self.width = int(width)
        self.n_grains = int(n_grains)
        self.boundary_contrast = float(boundary_contrast)

    def __repr__(self) -> str:
        return f'<PhantomParams {self.height}x{self.width} n_grains={self.n_grains}>'

    def to_dict(self) -> PhantomParamsPayload:
        return {name: getattr(self, name) for name in self.__slots__}  # type: ignore

    @classmethod
    def from_dict(cls, data: PhantomParamsPayload) -> Self:
        unknown = set(data) - set(cls.__slots__)
        if unknown:
            raise InvalidArgument(f'unknown phantom parameters: {", ".join(sorted(unknown))}')
        return cls(**data)

_DEFAULT_RATES = (0.01, 0.05, 0.10, 0.15, 0.20, 0.25)

class ExperimentConfig:
    """Everything an experiment sweep needs.

    Parameters
    -----------
    phantom: :class:`PhantomParams`
        The phantom.
    patterns: :class:`PatternParams`
        Pattern rendering.
    indexing: :class:`IndexingParams`
        The indexer.
    bpfa: :class:`BpfaParams`
        Inpainting; its seed is replaced by each arm's seed.
    noise_kinds: List[:class:`NoiseKind`]
        Noise models swept. Defaults to Gaussian and Poisson.
    snrs_db: List[:class:`float`]
        Target SNRs swept for every noise model. Defaults to ``[-5, 5]``.
    noiseless: :class:`bool`
        Whether a noiseless arm is added. Defaults to ``True``.
    strategy: :class:`SamplingStrategy`
        Probe subsampling. Defaults to UDS.
    rates: List[:class:`float`]
        Sampling rates swept, in ``(0, 1]``.
    map_kinds: List[:class:`MapKind`]
        Maps reconstructed and scored.
    zsp_correction: List[:class:`MapKind`]
        Map kinds whose ZSPs are treated as unsampled. Defaults to IPF.
    zsp_fraction: :class:`float`
        Fraction of sampled pixels planted as ZSPs in the ZSP study.
    decoys: :class:`int`
        Extra library orientations absent from the phantom.
    seeds: List[:class:`int`]
        One Monte-Carlo repetition per seed. Defaults to ``0..4``.
    reimpose: :class:`bool`
        Copy observed values back after inpainting.
    output_dir: :class:`str`
        Where results are written.
    """

    __slots__ = (
        'phantom',
        'patterns',
        'indexing',
        'bpfa',
        'noise_kinds',
        'snrs_db',
        'noiseless',
        'strategy',
        'rates',
        'map_kinds',
        'zsp_correction',
        'zsp_fraction',
        'decoys',
        'seeds',
        'reimpose',
        'output_dir',
    )

    def __init__(
        self,
        *,
        phantom: Optional[PhantomParams] = None,
        patterns: Optional[PatternParams] = None,
        indexing: Optional[IndexingParams] = None,
        bpfa: Optional[BpfaParams] = None,
        noise_kinds: Sequence[Union[NoiseKind, str]] = (NoiseKind.gaussian, NoiseKind.poisson),
        snrs_db: Sequence[float] = (-5.0, 5.0),
        noiseless: bool = True,
        strategy: Union[SamplingStrategy, str] = SamplingStrategy.uds,
        rates: Sequence[float] = _DEFAULT_RATES,
        map_kinds: Sequence[Union[MapKind, str]] = (MapKind.band_contrast, MapKind.ipf),
        zsp_correction: Sequence[Union[MapKind, str]] = (MapKind.ipf,),
        zsp_fraction: float = 0.23,
        decoys: int = 0,
        seeds: Sequence[int] = (0, 1, 2, 3, 4),
        reimpose: bool = False,
        output_dir: str = 'out',
    ):
        self.phantom = phantom or PhantomParams()
        self.patterns = patterns or PatternParams()
        self.indexing = indexing or IndexingParams()
        self.bpfa = bpfa or BpfaParams()
        self.noise_kinds = [to_enum(NoiseKind, k) for k in noise_kinds]
        self.snrs_db = [float(s) for s in snrs_db]
        self.noiseless = bool(noiseless)
        self.strategy = to_enum(SamplingStrategy, strategy)
        self.rates = [float(r) for r in rates]
        self.map_kinds = [to_enum(MapKind, k) for k in map_kinds]
        self.zsp_correction = [to_enum(MapKind, k) for k in zsp_correction]
        self.zsp_fraction = float(zsp_fraction)
        self.decoys = int(decoys)
        self.seeds = [int(s) for s in seeds]
        self.reimpose = bool(reimpose)
        self.output_dir = str(output_dir)

        if not self.seeds:
            raise InvalidArgument('at least one seed is required')
        if not self.rates or any(not 0.0 < r <= 1.0 for r in self.rates):
            raise InvalidArgument(f'rates must be a nonempty subset of (0, 1], not {self.rates}')
        if any(math.isnan(s) for s in self.snrs_db):
            raise InvalidArgument('target SNRs must be numbers')
        if not 0.0 <= self.zsp_fraction <= 1.0:
            raise InvalidArgument(f'zsp_fraction must lie in [0, 1], not {self.zsp_fraction}')
        if self.decoys < 0:
            raise InvalidArgument('decoys must be nonnegative')

    def __repr__(self) -> str:
        return (
            f'<ExperimentConfig phantom={self.phantom!r} noise_kinds={[str(k) for k in self.noise_kinds]} '
            f'snrs_db={self.snrs_db} rates={self.rates} seeds={self.seeds}>'
        )

    def noise_arms(self) -> List[NoiseSpec]:
        """Every (model, SNR) pair of the sweep, the noiseless arm first.

        The returned specs carry seed 0; runners reseed them per arm.
        """
        arms = [NoiseSpec(NoiseKind.none)] if self.noiseless else []
        for kind in self.noise_kinds:
            if kind is NoiseKind.none:
                continue
            arms.extend(NoiseSpec(kind, snr) for snr in self.snrs_db)
        return arms

    def to_dict(self) -> ExperimentConfigPayload:
        return {
            'phantom': self.phantom.to_dict(),
            'patterns': self.patterns.to_dict(),
            'indexing': self.indexing.to_dict(),
            'bpfa': self.bpfa.to_dict(),
            'noise_kinds': [str(k) for k in self.noise_kinds],
            'snrs_db': list(self.snrs_db),
            'noiseless': self.noiseless,
            'strategy': str(self.strategy),
            'rates': list(self.rates),
            'map_kinds': [str(k) for k in self.map_kinds],
            'zsp_correction': [str(k) for k in self.zsp_correction],
            'zsp_fraction': self.zsp_fraction,
            'decoys': self.decoys,
            'seeds': list(self.seeds),
            'reimpose': self.reimpose,
            'output_dir': self.output_dir,
        }  # type: ignore

    @classmethod
    def from_dict(cls, data: ExperimentConfigPayload) -> Self:
        """Build a config from a declarative document.

        Raises
        -------
        InvalidArgument
            The document has unknown keys or invalid values.
        """
        if not isinstance(data, dict):
            raise InvalidArgument('an experiment config must be a mapping')
        unknown = set(data) - set(cls.__slots__)
        if unknown:
            raise InvalidArgument(f'unknown config keys: {", ".join(sorted(unknown))}')

        kwargs: Dict[str, Any] = dict(data)
        nested = {'phantom': PhantomParams, 'patterns': PatternParams, 'indexing': IndexingParams, 'bpfa': BpfaParams}
        for key, params_cls in nested.items():
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = params_cls.from_dict(kwargs[key])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> Self:
        """Read a JSON or YAML config.

        Raises
        -------
        FormatError
            The file cannot be parsed.
        """
        path = os.fspath(path)
        try:
            with open(path, 'r', encoding='utf-8') as f:
                # YAML is a superset of JSON.
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise FormatError(f'cannot parse config: {e}', path=path) from e
        return cls.from_dict(data or {})

    def hash(self) -> str:
        """SHA-256 of the canonical JSON form, recorded for provenance."""
        return config_hash(self.to_dict())

CSV_COLUMNS = (
    'experiment',
    'variant',
    'seed',
    'noise_kind',
    'target_snr_db',
    'measured_snr_db',
    'rate',
    'effective_rate',
    'map_kind',
    'hit_rate',
    'hit_rate_sampled',
    'normalized_error',
    'ssim',
    'wall_time_s',
)

class ResultRow(NamedTuple):
    """One line of an experiment CSV.

    ``measured_snr_db`` is ``None`` for noiseless arms. ``hit_rate`` is
    ``1 - |Ω_zsp| / N_p``; ``hit_rate_sampled`` divides by ``|Ω|`` instead.
    """

    experiment: str
    variant: str
    seed: int
    noise_kind: str
    target_snr_db: float
    measured_snr_db: Optional[float]
    rate: float
    effective_rate: float
    map_kind: str
    hit_rate: float
    hit_rate_sampled: float
    normalized_error: float
    ssim: float
    wall_time_s: float

    def to_csv(self) -> List[str]:
        return [_format(getattr(self, name)) for name in CSV_COLUMNS]

    @classmethod
    def from_csv(cls, record: Dict[str, str]) -> ResultRow:
        def real(name: str) -> float:
            return float(record[name])

        measured = record['measured_snr_db']
        return cls(
            experiment=record['experiment'],
            variant=record['variant'],
            seed=int(record['seed']),
            noise_kind=record['noise_kind'],
            target_snr_db=real('target_snr_db'),
            measured_snr_db=float(measured) if measured else None,
            rate=real('rate'),
            effective_rate=real('effective_rate'),
            map_kind=record['map_kind'],
            hit_rate=real('hit_rate'),
            hit_rate_sampled=real('hit_rate_sampled'),
            normalized_error=real('normalized_error'),
            ssim=real('ssim'),
            wall_time_s=real('wall_time_s'),
        )

def _format(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return str(value)

def write_results(path: Union[str, os.PathLike], rows: Iterable[ResultRow]) -> int:
    """Write rows under the fixed :data:`CSV_COLUMNS` header. Returns the row count."""
    count = 0
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.to_csv())
            count += 1
    log.info(f'Wrote {count} result rows to {os.fspath(path)}.')
    return count

def read_results(path: Union[str, os.PathLike]) -> List[ResultRow]:
    """Read a CSV written by :func:`write_results`.

    Raises
    -------
    FormatError
        The header differs from :data:`CSV_COLUMNS` or a row is malformed.
    """
    path = os.fspath(path)
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise FormatError(f'unexpected CSV header {reader.fieldnames}', path=path)
        try:
            return [ResultRow.from_csv(record) for record in reader]
        except (KeyError, ValueError) as e:
            raise FormatError(f'malformed result row: {e}', path=path) from e
