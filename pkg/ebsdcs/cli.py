"""Command-line interface.

Every subcommand prints a one-line JSON summary on stdout. Failures print
``error: {"type": ..., "message": ...}`` on stderr and exit with status 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence

from . import __version__
from .bpfa import BpfaParams, PatchGeometry, inpaint
from .config import ExperimentConfig, PhantomParams
from .enums import MapKind, NoiseKind, SamplingStrategy, SsimWindow
from .errors import EbsdcsException, InvalidArgument
from .file import make_provenance, read_json, read_map, read_mask, read_stack, write_json, write_map, write_mask, write_stack
from .globals import workers
from .grid import ProbeGrid, SampleMask
from .indexing import build_library, index_stack
from .maps import RgbMap
from .metrics import hit_rate, normalized_error, ssim
from .noise import NoiseSpec, corrupt_stack
from .phantom import GrainMap, phantom_maps, synth_stack, voronoi_phantom
from .pipeline import run_indexing_robustness, run_subsampling_sweep, run_zsp_correction
from .sampling import make_mask

__all__ = (
    'build_parser',
    'main',
)

log = logging.getLogger(__name__)

def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    data = config.to_dict()
    if args.out is not None:
        data['output_dir'] = args.out
    if args.seed is not None:
        data['seeds'] = [args.seed]
    for key in ('seeds', 'rates', 'snrs_db', 'noise_kinds', 'map_kinds', 'zsp_correction', 'strategy'):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, 'reimpose', False):
        data['reimpose'] = True
    if getattr(args, 'no_noiseless', False):
        data['noiseless'] = False
    return ExperimentConfig.from_dict(data)

def _out(args: argparse.Namespace, name: str) -> str:
    out = args.out or 'out'
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, name)

def _seed(args: argparse.Namespace) -> int:
    return 0 if args.seed is None else args.seed

def _load_grains(path: str) -> GrainMap:
    return GrainMap.from_dict(read_json(path))

def cmd_phantom(args: argparse.Namespace) -> Dict[str, Any]:
    config = _load_config(args)
    p = PhantomParams(
        height=args.height or config.phantom.height,
        width=args.width or config.phantom.width,
        n_grains=args.grains or config.phantom.n_grains,
        boundary_contrast=config.phantom.boundary_contrast if args.boundary_contrast is None else args.boundary_contrast,
    )
    grains = voronoi_phantom(ProbeGrid(p.height, p.width), p.n_grains, _seed(args))
    contrast, ipf = phantom_maps(grains, p.boundary_contrast)
    provenance = make_provenance(seed=_seed(args), config_hash=config.hash(), command='phantom')
    write_json(_out(args, 'phantom.json'), grains.to_dict())
    write_map(_out(args, 'band_contrast.pgm'), contrast, provenance=provenance)
    write_map(_out(args, 'ipf.ppm'), ipf, provenance=provenance)
    return {'grains': grains.n_grains, 'height': p.height, 'width': p.width}

def cmd_mask(args: argparse.Namespace) -> Dict[str, Any]:
    if args.phantom:
        grid = _load_grains(args.phantom).grid
    elif args.height and args.width:
        grid = ProbeGrid(args.height, args.width)
    else:
        raise InvalidArgument('mask needs --phantom or both --height and --width')
    mask = make_mask(args.strategy, grid, args.rate, _seed(args))
    path = _out(args, 'mask.json')
    write_mask(path, mask)
    return {'mask': path, 'sampled': mask.count, 'rate': mask.count / grid.count}

def cmd_synth(args: argparse.Namespace) -> Dict[str, Any]:
    config = _load_config(args)
    grains = _load_grains(args.phantom)
    mask = read_mask(args.mask) if args.mask else SampleMask.full(grains.grid)
    modulation = None if args.flat else phantom_maps(grains, config.phantom.boundary_contrast)[0]
    stack = synth_stack(grains, mask, config.patterns, modulation=modulation)
    path = _out(args, 'stack.ebcs')
    write_stack(path, stack)
    write_mask(_out(args, 'stack_mask.json'), mask)
    return {'stack': path, 'patterns': len(stack), 'pattern_shape': list(stack.pattern_shape)}

def cmd_noise(args: argparse.Namespace) -> Dict[str, Any]:
    mask = read_mask(args.mask)
    stack = read_stack(args.stack, mask)
    noisy, snr = corrupt_stack(stack, NoiseSpec(args.kind, args.snr, _seed(args)))
    path = _out(args, 'noisy.ebcs')
    write_stack(path, noisy)
    return {'stack': path, 'measured_snr_db': snr if snr != float('inf') else None}

def cmd_index(args: argparse.Namespace) -> Dict[str, Any]:
    config = _load_config(args)
    grains = _load_grains(args.phantom)
    mask = read_mask(args.mask)
    stack = read_stack(args.stack, mask)
    library = build_library(grains.orientations, config.patterns, config.indexing, decoys=config.decoys, seed=_seed(args))
    indexed = index_stack(stack, library, config.indexing)

    mask_path = _out(args, 'indexed_mask.json')
    write_mask(mask_path, indexed.mask)
    provenance = make_provenance(seed=_seed(args), config_hash=config.hash(), command='index')
    write_map(_out(args, 'band_contrast.pgm'), indexed.band_contrast, mask_path=mask_path, provenance=provenance)
    write_map(_out(args, 'ipf.ppm'), indexed.ipf, mask_path=mask_path, provenance=provenance)
    return {'hit_rate': indexed.hit_rate, 'hit_rate_sampled': indexed.hit_rate_sampled, 'zsp': int(indexed.mask.zsp.size)}

def cmd_inpaint(args: argparse.Namespace) -> Dict[str, Any]:
    config = _load_config(args)
    source = read_map(args.map)
    mask = read_mask(args.mask)
    geom = None
    if args.patch:
        geom = PatchGeometry.for_map(source.map, tuple(args.patch))
    params = config.bpfa.with_seed(_seed(args)) if args.seed is not None else config.bpfa
    result = inpaint(source.map, mask, params, geom, reimpose=args.reimpose)

    ext = 'ppm' if isinstance(result, RgbMap) else 'pgm'
    path = _out(args, f'inpainted.{ext}')
    write_map(path, result, mask_path=args.mask, provenance=make_provenance(seed=params.seed, config_hash=config.hash(), command='inpaint'))
    return {'map': path, 'sampled': mask.count}

def cmd_metrics(args: argparse.Namespace) -> Dict[str, Any]:
    ref = read_map(args.ref).map
    est = read_map(args.est).map
    summary: Dict[str, Any] = {
        'normalized_error': normalized_error(ref, est),
        'ssim': ssim(ref, est, args.window, window_kind=SsimWindow(args.window_kind)),
    }
    if args.mask:
        mask = read_mask(args.mask)
        summary['hit_rate'] = hit_rate(int(mask.zsp.size), mask.grid.count)
    return summary

def _experiment(runner: Callable) -> Callable[[argparse.Namespace], Dict[str, Any]]:
    def command(args: argparse.Namespace) -> Dict[str, Any]:
        config = _load_config(args)
        result = runner(config, quiet=args.quiet)
        return {'csv': result.csv_path, 'rows': len(result.rows)}

    return command

def _add_experiment_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument('--seeds', type=int, nargs='+', help='Monte-Carlo seeds')
    sub.add_argument('--rates', type=float, nargs='+', help='sampling rates in (0, 1]')
    sub.add_argument('--snrs', dest='snrs_db', type=float, nargs='+', help='target SNRs in dB')
    sub.add_argument('--noise-kinds', nargs='+', choices=[str(k) for k in NoiseKind])
    sub.add_argument('--map-kinds', nargs='+', choices=[str(k) for k in MapKind])
    sub.add_argument('--zsp-correction', nargs='+', choices=[str(k) for k in MapKind], help='map kinds whose ZSPs are inpainted')
    sub.add_argument('--strategy', choices=[str(s) for s in SamplingStrategy])
    sub.add_argument('--no-noiseless', action='store_true', help='drop the noiseless arm')
    sub.add_argument('--reimpose', action='store_true', help='copy sampled values back after inpainting')

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='ebsdcs', description='Compressive EBSD simulation and BPFA inpainting.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--seed', type=int, help='seed for every random choice')
    parser.add_argument('--threads', type=int, default=1, help='worker threads')
    parser.add_argument('--out', help='output directory, defaults to "out" or the config output_dir')
    parser.add_argument('--config', help='JSON or YAML experiment config')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='more logging, repeatable')
    parser.add_argument('--quiet', action='store_true', help='errors only, no progress bars')
    commands = parser.add_subparsers(dest='command', required=True)

    sub = commands.add_parser('phantom', help='generate a Voronoi phantom and its reference maps')
    sub.add_argument('--height', type=int)
    sub.add_argument('--width', type=int)
    sub.add_argument('--grains', type=int)
    sub.add_argument('--boundary-contrast', type=float)
    sub.set_defaults(func=cmd_phantom)

    sub = commands.add_parser('mask', help='draw a sampling mask')
    sub.add_argument('--phantom')
    sub.add_argument('--height', type=int)
    sub.add_argument('--width', type=int)
    sub.add_argument('--rate', type=float, required=True)
    sub.add_argument('--strategy', choices=[str(s) for s in SamplingStrategy], default='uds')
    sub.set_defaults(func=cmd_mask)

    sub = commands.add_parser('synth', help='synthesise the pattern stack of a phantom')
    sub.add_argument('--phantom', required=True)
    sub.add_argument('--mask')
    sub.add_argument('--flat', action='store_true', help='do not weaken boundary patterns')
    sub.set_defaults(func=cmd_synth)

    sub = commands.add_parser('noise', help='corrupt a pattern stack')
    sub.add_argument('--stack', required=True)
    sub.add_argument('--mask', required=True)
    sub.add_argument('--kind', choices=[str(k) for k in NoiseKind], required=True)
    sub.add_argument('--snr', type=float, default=float('inf'), help='target SNR in dB')
    sub.set_defaults(func=cmd_noise)

    sub = commands.add_parser('index', help='index a pattern stack into maps')
    sub.add_argument('--stack', required=True)
    sub.add_argument('--mask', required=True)
    sub.add_argument('--phantom', required=True, help='phantom whose orientations form the library')
    sub.set_defaults(func=cmd_index)

    sub = commands.add_parser('inpaint', help='inpaint an incomplete map')
    sub.add_argument('--map', required=True)
    sub.add_argument('--mask', required=True)
    sub.add_argument('--patch', type=int, nargs=2, metavar=('H_OP', 'W_OP'))
    sub.add_argument('--reimpose', action='store_true')
    sub.set_defaults(func=cmd_inpaint)

    sub = commands.add_parser('metrics', help='compare two maps')
    sub.add_argument('--ref', required=True)
    sub.add_argument('--est', required=True)
    sub.add_argument('--mask', help='mask whose ZSPs give the hit rate')
    sub.add_argument('--window', type=int, default=8)
    sub.add_argument('--window-kind', choices=[str(w) for w in SsimWindow], default='uniform')
    sub.set_defaults(func=cmd_metrics)

    for name, runner, text in (
        ('sweep', run_subsampling_sweep, 'subsampling sweep'),
        ('zsp-study', run_zsp_correction, 'ZSP correction study'),
        ('robustness', run_indexing_robustness, 'indexing robustness under noise'),
    ):
        sub = commands.add_parser(name, help=text)
        _add_experiment_flags(sub)
        sub.set_defaults(func=_experiment(runner))

    return parser

def _configure_logging(verbose: int, quiet: bool) -> None:
    if quiet:
        level = logging.ERROR
    else:
        level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)]
    logging.basicConfig(level=level, format='%(levelname)s %(name)s %(asctime)s %(message)s')

def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose, args.quiet)

    try:
        if args.threads < 1:
            raise InvalidArgument(f'--threads must be at least 1, not {args.threads}')
        with workers(args.threads):
            summary = args.func(args)
    except (EbsdcsException, OSError) as e:
        payload = {'type': type(e).__name__, 'message': str(e)}
        print(f'error: {json.dumps(payload)}', file=sys.stderr)
        return 1

    print(json.dumps(summary, sort_keys=True))
    return 0
