"""
Experiment runners: indexing robustness, ZSP correction and the
subsampling sweep.

Every runner walks a grid of arms (seed × noise arm, and sampling rate for
the sweep), runs each arm independently and writes its files under its own
directory, then writes one CSV for the whole experiment. Arms draw every
random choice from seeds derived from ``(seed, arm)``, so reruns with the
same config produce identical CSVs apart from the wall-time column.

Band-contrast references are the band-contrast maps obtained by indexing
the noiseless, fully sampled stack of the same phantom; IPF references are
the phantom's own colouring.
"""
from __future__ import annotations

import logging
import math
import os
import time
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .abc import Map
from .bpfa import inpaint
from .config import ExperimentConfig, ResultRow, write_results
from .enums import MapKind, NoiseKind
from .errors import ExperimentError, InvalidArgument
from .file import make_provenance, write_map, write_mask
from .grid import ProbeGrid, SampleMask
from .indexing import IndexedMaps, OrientationLibrary, build_library, index_stack
from .maps import RgbMap, ScalarMap
from .metrics import hit_rate, normalized_error, ssim
from .noise import NoiseSpec, corrupt_stack
from .phantom import GrainMap, phantom_maps, synth_stack, voronoi_phantom
from .sampling import apply_mask, detect_zsp, effective_rate, make_mask, merge_zsp, plant_zsp
from .utils import derive_seed, parallel_map

__all__ = (
    'Scene',
    'ExperimentResult',
    'build_scene',
    'run_indexing_robustness',
    'run_zsp_correction',
    'run_subsampling_sweep',
)

log = logging.getLogger(__name__)

class Scene(NamedTuple):
    """The phantom of one seed and everything derived from it once."""

    seed: int
    grains: GrainMap
    contrast: ScalarMap
    ipf: RgbMap
    library: OrientationLibrary
    reference_contrast: ScalarMap

    def reference(self, kind: MapKind) -> Map:
        return self.ipf if kind is MapKind.ipf else self.reference_contrast

class ExperimentResult(NamedTuple):
    rows: List[ResultRow]
    csv_path: str

def build_scene(config: ExperimentConfig, seed: int) -> Scene:
    """Generate the phantom for ``seed`` with its library and references."""
    p = config.phantom
    grid = ProbeGrid(p.height, p.width)
    grains = voronoi_phantom(grid, p.n_grains, seed)
    contrast, ipf = phantom_maps(grains, p.boundary_contrast)
    library = build_library(grains.orientations, config.patterns, config.indexing, decoys=config.decoys, seed=seed)

    full = SampleMask.full(grid)
    stack = synth_stack(grains, full, config.patterns, modulation=contrast)
    indexed = index_stack(stack, library, config.indexing)
    if indexed.hit_rate < 1.0:
        log.warning(f'Noiseless indexing of seed {seed} left {indexed.mask.zsp.size} ZSPs.')
    return Scene(seed, grains, contrast, ipf, library, indexed.band_contrast)

def _arm_name(seed: int, spec: NoiseSpec, rate: Optional[float] = None) -> str:
    noise = 'noiseless' if spec.kind is NoiseKind.none else f'{spec.kind}{spec.target_snr_db:+g}db'
    name = f'seed{seed}_{noise}'
    return name if rate is None else f'{name}_rate{rate:g}'

def _indexed_map(indexed: IndexedMaps, kind: MapKind) -> Map:
    return indexed.ipf if kind is MapKind.ipf else indexed.band_contrast

def _score(reference: Map, estimate: Map) -> Tuple[float, float]:
    return normalized_error(reference, estimate), ssim(reference, estimate)

def _acquire(scene: Scene, config: ExperimentConfig, mask: SampleMask, spec: NoiseSpec) -> Tuple[IndexedMaps, Optional[float]]:
    stack = synth_stack(scene.grains, mask, config.patterns, modulation=scene.contrast)
    stack, snr = corrupt_stack(stack, spec)
    indexed = index_stack(stack, scene.library, config.indexing)
    return indexed, (snr if math.isfinite(snr) else None)

def _run_arms(label: str, arms: Sequence[Tuple[str, Callable[[], List[ResultRow]]]], quiet: bool) -> List[ResultRow]:
    bar = tqdm(total=len(arms), desc=label, unit='arm', disable=quiet)

    def run(arm: Tuple[str, Callable[[], List[ResultRow]]]) -> List[ResultRow]:
        name, work = arm
        started = time.perf_counter()
        try:
            rows = work()
        except Exception as e:
            raise ExperimentError(name, e) from e
        log.info(f'{label}: arm {name} done in {time.perf_counter() - started:.2f} s.')
        bar.update()
        return rows

    try:
        results = parallel_map(run, list(arms))
    finally:
        bar.close()
    return [row for rows in results for row in rows]

def _scenes(config: ExperimentConfig) -> Dict[int, Scene]:
    scenes = parallel_map(lambda seed: build_scene(config, seed), list(config.seeds))
    return dict(zip(config.seeds, scenes))

def _finish(config: ExperimentConfig, name: str, rows: List[ResultRow]) -> ExperimentResult:
    path = os.path.join(config.output_dir, f'{name}.csv')
    write_results(path, rows)
    return ExperimentResult(rows, path)

def _row(experiment: str, variant: str, seed: int, spec: NoiseSpec, measured: Optional[float], **fields) -> ResultRow:
    return ResultRow(
        experiment=experiment,
        variant=variant,
        seed=seed,
        noise_kind=str(spec.kind),
        target_snr_db=spec.target_snr_db,
        measured_snr_db=measured,
        **fields,
    )

def run_indexing_robustness(config: ExperimentConfig, *, quiet: bool = True) -> ExperimentResult:
    """Index fully sampled stacks under every noise arm and score the maps.

    Emits one row per (noise arm, seed, map kind) with the hit rate and the
    normalized error and SSIM of the indexed map against its reference.
    """
    os.makedirs(config.output_dir, exist_ok=True)
    scenes = _scenes(config)
    provenance_hash = config.hash()
    arms = []

    for seed in config.seeds:
        scene = scenes[seed]
        for number, base in enumerate(config.noise_arms()):
            spec = base.with_seed(derive_seed(seed, 2, number))
            name = _arm_name(seed, spec)

            def work(scene=scene, spec=spec, name=name) -> List[ResultRow]:
                started = time.perf_counter()
                full = SampleMask.full(scene.grains.grid)
                indexed, measured = _acquire(scene, config, full, spec)
                rows = []
                folder = os.path.join(config.output_dir, 'indexing', name)
                os.makedirs(folder, exist_ok=True)
                for kind in config.map_kinds:
                    estimate = _indexed_map(indexed, kind)
                    error, similarity = _score(scene.reference(kind), estimate)
                    write_map(
                        os.path.join(folder, f'{kind}.{"ppm" if kind is MapKind.ipf else "pgm"}'),
                        estimate,
                        provenance=make_provenance(seed=scene.seed, config_hash=provenance_hash, command='indexing'),
                    )
                    rows.append(_row(
                        'indexing', 'indexed', scene.seed, spec, measured,
                        rate=1.0,
                        effective_rate=effective_rate(indexed.mask),
                        map_kind=str(kind),
                        hit_rate=indexed.hit_rate,
                        hit_rate_sampled=indexed.hit_rate_sampled,
                        normalized_error=error,
                        ssim=similarity,
                        wall_time_s=time.perf_counter() - started,
                    ))
                return rows

            arms.append((name, work))

    rows = _run_arms('indexing', arms, quiet)
    return _finish(config, 'indexing', rows)

def run_zsp_correction(config: ExperimentConfig, *, quiet: bool = True) -> ExperimentResult:
    """Compare indexed maps with and without ZSP correction.

    Every arm indexes a fully sampled stack. Noiseless arms plant
    ``zsp_fraction`` of the sampled positions as ZSPs instead, zeroing them
    in the indexed map. Corrected maps are inpainted with the ZSPs treated
    as unsampled; an arm without ZSPs keeps the indexed map as is.

    Raises
    -------
    InvalidArgument
        IPF is not among the ZSP-corrected map kinds.
    """
    if MapKind.ipf not in config.zsp_correction:
        raise InvalidArgument('the ZSP study needs IPF among the ZSP-corrected map kinds')
    os.makedirs(config.output_dir, exist_ok=True)
    scenes = _scenes(config)
    provenance_hash = config.hash()
    kinds = [k for k in config.map_kinds if k in config.zsp_correction] or [MapKind.ipf]
    arms = []

    for seed in config.seeds:
        scene = scenes[seed]
        for number, base in enumerate(config.noise_arms()):
            spec = base.with_seed(derive_seed(seed, 2, number))
            name = _arm_name(seed, spec)

            def work(scene=scene, spec=spec, name=name, number=number) -> List[ResultRow]:
                started = time.perf_counter()
                grid = scene.grains.grid
                full = SampleMask.full(grid)
                indexed, measured = _acquire(scene, config, full, spec)

                mask = indexed.mask
                if spec.kind is NoiseKind.none:
                    planted = plant_zsp(full, config.zsp_fraction, derive_seed(scene.seed, 4, number))
                    mask = merge_zsp(mask, planted)

                folder = os.path.join(config.output_dir, 'zsp', name)
                os.makedirs(folder, exist_ok=True)
                mask_path = os.path.join(folder, 'mask.json')
                write_mask(mask_path, mask)
                provenance = make_provenance(seed=scene.seed, config_hash=provenance_hash, command='zsp-study')
                hr = hit_rate(mask.zsp.size, grid.count)
                sampled_hr = 1.0 - mask.zsp.size / (mask.count + mask.zsp.size)

                rows = []
                for kind in kinds:
                    # Failed positions read as zero in the uncorrected map.
                    uncorrected = apply_mask(_indexed_map(indexed, kind), merge_zsp(full, mask.zsp))
                    if mask.zsp.size == 0:
                        corrected = uncorrected
                    elif mask.count == 0:
                        corrected = uncorrected.with_data(np.zeros_like(uncorrected.data))
                    else:
                        params = config.bpfa.with_seed(derive_seed(scene.seed, 3, number))
                        corrected = inpaint(uncorrected, mask, params, reimpose=config.reimpose)

                    remaining = detect_zsp(corrected, full).size
                    reference = scene.reference(kind)
                    ext = 'ppm' if kind is MapKind.ipf else 'pgm'
                    for variant, estimate, rate_hr, rate_hr_sampled in (
                        ('uncorrected', uncorrected, hr, sampled_hr),
                        ('corrected', corrected, hit_rate(remaining, grid.count), 1.0 - remaining / grid.count),
                    ):
                        write_map(os.path.join(folder, f'{kind}_{variant}.{ext}'), estimate, mask_path=mask_path, provenance=provenance)
                        error, similarity = _score(reference, estimate)
                        rows.append(_row(
                            'zsp', variant, scene.seed, spec, measured,
                            rate=1.0,
                            effective_rate=effective_rate(mask),
                            map_kind=str(kind),
                            hit_rate=rate_hr,
                            hit_rate_sampled=rate_hr_sampled,
                            normalized_error=error,
                            ssim=similarity,
                            wall_time_s=time.perf_counter() - started,
                        ))
                return rows

            arms.append((name, work))

    rows = _run_arms('zsp', arms, quiet)
    return _finish(config, 'zsp', rows)

def run_subsampling_sweep(config: ExperimentConfig, *, quiet: bool = True) -> ExperimentResult:
    """Subsample, index, inpaint and score every (rate, noise arm, seed).

    Map kinds listed in ``zsp_correction`` have their ZSPs merged into the
    unsampled set before inpainting. Each arm writes its mask and the
    reconstructed maps.
    """
    os.makedirs(config.output_dir, exist_ok=True)
    scenes = _scenes(config)
    provenance_hash = config.hash()
    arms = []

    for seed in config.seeds:
        scene = scenes[seed]
        for rate_number, rate in enumerate(config.rates):
            mask = make_mask(config.strategy, scene.grains.grid, rate, derive_seed(seed, 1, rate_number))
            for number, base in enumerate(config.noise_arms()):
                spec = base.with_seed(derive_seed(seed, 2, number, rate_number))
                name = _arm_name(seed, spec, rate)

                def work(scene=scene, mask=mask, spec=spec, name=name, rate=rate, keys=(number, rate_number)) -> List[ResultRow]:
                    started = time.perf_counter()
                    indexed, measured = _acquire(scene, config, mask, spec)

                    folder = os.path.join(config.output_dir, 'sweep', name)
                    os.makedirs(folder, exist_ok=True)
                    provenance = make_provenance(seed=scene.seed, config_hash=provenance_hash, command='sweep')

                    rows = []
                    for kind in config.map_kinds:
                        used = indexed.mask if kind in config.zsp_correction else mask
                        incomplete = apply_mask(_indexed_map(indexed, kind), used)
                        if used.count == 0:
                            estimate = incomplete
                        else:
                            params = config.bpfa.with_seed(derive_seed(scene.seed, 3, *keys))
                            estimate = inpaint(incomplete, used, params, reimpose=config.reimpose)

                        mask_path = os.path.join(folder, f'{kind}_mask.json')
                        write_mask(mask_path, used)
                        ext = 'ppm' if kind is MapKind.ipf else 'pgm'
                        write_map(os.path.join(folder, f'{kind}.{ext}'), estimate, mask_path=mask_path, provenance=provenance)

                        error, similarity = _score(scene.reference(kind), estimate)
                        rows.append(_row(
                            'sweep', 'zsp_corrected' if kind in config.zsp_correction else 'inpainted', scene.seed, spec, measured,
                            rate=rate,
                            effective_rate=effective_rate(used),
                            map_kind=str(kind),
                            hit_rate=indexed.hit_rate,
                            hit_rate_sampled=indexed.hit_rate_sampled,
                            normalized_error=error,
                            ssim=similarity,
                            wall_time_s=time.perf_counter() - started,
                        ))
                    return rows

                arms.append((name, work))

    rows = _run_arms('sweep', arms, quiet)
    return _finish(config, 'sweep', rows)
