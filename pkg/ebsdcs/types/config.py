from __future__ import annotations
from typing import List, Literal, TypedDict
from typing_extensions import NotRequired

class PatternParams(TypedDict):
    height: int
    width: int
    n_bands: int
    band_width: float
    amplitude: float
    rho_fraction: NotRequired[float]
    theta_steps: NotRequired[int]
    rho_steps: NotRequired[int]

class IndexingParams(TypedDict):
    n_theta: int
    n_rho: int
    min_line_fraction: NotRequired[float]
    max_bands: int
    min_prominence: float
    min_peak_ratio: NotRequired[float]
    min_bands_required: int
    suppress_theta: NotRequired[int]
    suppress_rho: NotRequired[int]
    support_width: NotRequired[float]
    unmatched_cost: NotRequired[float]
    max_distance: NotRequired[float]

class BpfaParams(TypedDict):
    K: int
    s: int
    batch_size: int
    epochs: int
    em_iters_per_batch: int
    seed: int
    init: Literal['gaussian', 'data']
    a: NotRequired[float]
    b: NotRequired[float]

class PhantomParams(TypedDict):
    height: int
    width: int
    n_grains: int
    boundary_contrast: NotRequired[float]

class ExperimentConfig(TypedDict):
    phantom: NotRequired[PhantomParams]
    patterns: NotRequired[PatternParams]
    indexing: NotRequired[IndexingParams]
    bpfa: NotRequired[BpfaParams]
    noise_kinds: NotRequired[List[Literal['gaussian', 'poisson', 'none']]]
    snrs_db: NotRequired[List[float]]
    noiseless: NotRequired[bool]
    strategy: NotRequired[Literal['uds', 'linehop']]
    rates: NotRequired[List[float]]
    map_kinds: NotRequired[List[Literal['band_contrast', 'ipf']]]
    zsp_correction: NotRequired[List[Literal['band_contrast', 'ipf']]]
    zsp_fraction: NotRequired[float]
    decoys: NotRequired[int]
    seeds: NotRequired[List[int]]
    reimpose: NotRequired[bool]
    output_dir: NotRequired[str]
