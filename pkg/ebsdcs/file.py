"""Reading and writing maps, masks and pattern stacks.

Band-contrast maps are stored as 8-bit binary PGM after normalization onto
``[0, 255]``, IPF maps as 8-bit binary PPM. Each image has a JSON sidecar
next to it (``<image>.json``) holding the normalization record, the mask it
was produced under and provenance.

Pattern stacks use a small binary container::

    magic   4 bytes  b'EBCS'
    version u16      1
    H_p W_p u32 u32  probe grid
    H_d W_d u32 u32  detector
    count   u64      number of patterns
    payload count · H_d · W_d little-endian float32, ascending probe order

The probe indices themselves live in the companion mask JSON.
"""
from __future__ import annotations

import json
import logging
import os
from typing import Any, Dict, NamedTuple, Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import __version__
from .abc import Map
from .errors import FormatError, InvalidArgument
from .grid import SampleMask
from .maps import NormalizationRecord, RgbMap, ScalarMap, denormalize_map, normalize_map
from .phantom import PatternStack

from .types.sidecar import MapSidecar, Provenance

__all__ = (
    'STACK_MAGIC',
    'STACK_VERSION',
    'MapFile',
    'sidecar_path',
    'make_provenance',
    'write_map',
    'read_map',
    'write_mask',
    'read_mask',
    'write_stack',
    'read_stack',
    'write_json',
    'read_json',
)

log = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

STACK_MAGIC = b'EBCS'
STACK_VERSION = 1

_STACK_HEADER = np.dtype([
    ('magic', 'S4'),
    ('version', '<u2'),
    ('grid_h', '<u4'),
    ('grid_w', '<u4'),
    ('det_h', '<u4'),
    ('det_w', '<u4'),
    ('count', '<u8'),
])
_STACK_PAYLOAD = np.dtype('<f4')

class MapFile(NamedTuple):
    """A map read from disk with what its sidecar recorded."""

    map: Map
    normalization: Optional[NormalizationRecord]
    sidecar: MapSidecar

def sidecar_path(path: PathLike) -> str:
    return os.fspath(path) + '.json'

def make_provenance(*, seed: Optional[int] = None, config_hash: Optional[str] = None, command: str = '') -> Provenance:
    return {'seed': seed, 'config_hash': config_hash, 'command': command, 'version': __version__}

def write_json(path: PathLike, payload: Any) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')

def read_json(path: PathLike) -> Any:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f'malformed JSON: {e}', path=os.fspath(path)) from e

def _quantize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)

def write_map(
    path: PathLike,
    map: Map,
    *,
    record: Optional[NormalizationRecord] = None,
    mask_path: Optional[PathLike] = None,
    provenance: Optional[Provenance] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> str:
    """Write ``map`` as an 8-bit image plus its JSON sidecar.

    Scalar maps are normalized onto ``[0, 255]``, by ``record`` when given,
    otherwise by their own range. RGB maps are scaled by 255.

    Returns the sidecar path.
    """
    path = os.fspath(path)
    if isinstance(map, ScalarMap):
        if record is None:
            scaled, record = normalize_map(map, 0.0, 255.0)
            levels = scaled.values
        elif record.degenerate:
            levels = np.full(map.grid.count, record.target_lo)
        else:
            span = record.source_max - record.source_min
            levels = record.target_lo + (map.values - record.source_min) * ((record.target_hi - record.target_lo) / span)
        image = Image.fromarray(_quantize(levels.reshape(map.grid.shape)))
        kind = 'band_contrast'
    else:
        image = Image.fromarray(_quantize(map.to_image() * 255.0))
        kind = 'ipf'
        record = None

    image.save(path, format='PPM')
    sidecar: MapSidecar = {
        'kind': kind,
        'image': os.path.basename(path),
        'height': map.grid.height,
        'width': map.grid.width,
        'normalization': record.to_dict() if record is not None else None,
        'mask': os.fspath(mask_path) if mask_path is not None else None,
        'provenance': provenance or make_provenance(),
    }
    if extra:
        sidecar['extra'] = extra
    side = sidecar_path(path)
    write_json(side, sidecar)
    log.info(f'Wrote {kind} map {path}.')
    return side

def read_map(path: PathLike) -> MapFile:
    """Read a map written by :func:`write_map`.

    Band-contrast levels are mapped back through the stored normalization
    record; without a sidecar they are returned as levels in ``[0, 255]``.

    Raises
    -------
    FormatError
        The image is not an 8-bit PGM/PPM or disagrees with its sidecar.
    """
    path = os.fspath(path)
    try:
        with Image.open(path) as image:
            image.load()
            mode = image.mode
            pixels = np.asarray(image, dtype=np.float64)
    except UnidentifiedImageError as e:
        raise FormatError('not a PGM/PPM image', path=path) from e

    side = sidecar_path(path)
    sidecar: MapSidecar = read_json(side) if os.path.exists(side) else {
        'kind': 'ipf' if mode == 'RGB' else 'band_contrast',
        'image': os.path.basename(path),
        'height': pixels.shape[0],
        'width': pixels.shape[1],
        'provenance': make_provenance(),
    }
    if (sidecar.get('height'), sidecar.get('width')) != pixels.shape[:2]:
        raise FormatError(f'sidecar says {sidecar.get("height")}x{sidecar.get("width")}, image is {pixels.shape[0]}x{pixels.shape[1]}', path=path)

    if mode == 'L':
        levels = ScalarMap.from_image(pixels)
        payload = sidecar.get('normalization')
        if payload is None:
            return MapFile(levels, None, sidecar)
        try:
            record = NormalizationRecord.from_dict(payload)
        except (KeyError, TypeError, InvalidArgument) as e:
            raise FormatError('malformed normalization record', path=side) from e
        return MapFile(denormalize_map(levels, record), record, sidecar)
    if mode == 'RGB':
        return MapFile(RgbMap.from_image(pixels / 255.0), None, sidecar)
    raise FormatError(f'unsupported image mode {mode!r}', path=path)

def write_mask(path: PathLike, mask: SampleMask) -> None:
    write_json(path, mask.to_dict())

def read_mask(path: PathLike) -> SampleMask:
    """Read a mask JSON document.

    Raises
    -------
    FormatError
        The document is not a valid mask.
    """
    data = read_json(path)
    try:
        return SampleMask.from_dict(data)
    except (InvalidArgument, TypeError, ValueError) as e:
        raise FormatError(f'invalid mask: {e}', path=os.fspath(path)) from e

def write_stack(path: PathLike, stack: PatternStack) -> None:
    """Write ``stack`` in the binary stack format. The mask goes separately."""
    header = np.zeros(1, dtype=_STACK_HEADER)
    header['magic'] = STACK_MAGIC
    header['version'] = STACK_VERSION
    header['grid_h'], header['grid_w'] = stack.grid.shape
    header['det_h'], header['det_w'] = stack.pattern_shape
    header['count'] = len(stack)
    with open(path, 'wb') as f:
        f.write(header.tobytes())
        f.write(stack.data.astype(_STACK_PAYLOAD).tobytes())
    log.info(f'Wrote {len(stack)} patterns to {os.fspath(path)}.')

def read_stack(path: PathLike, mask: SampleMask) -> PatternStack:
    """Read a stack written by :func:`write_stack`, laid out over ``mask``.

    Raises
    -------
    FormatError
        Bad magic or version, a header that disagrees with ``mask`` or a
        truncated payload.
    """
    path = os.fspath(path)
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < _STACK_HEADER.itemsize:
        raise FormatError('file is shorter than the stack header', path=path)

    header = np.frombuffer(raw, dtype=_STACK_HEADER, count=1)[0]
    if bytes(header['magic']) != STACK_MAGIC:
        raise FormatError(f'bad magic {bytes(header["magic"])!r}', path=path)
    if int(header['version']) != STACK_VERSION:
        raise FormatError(f'unsupported stack version {int(header["version"])}', path=path)

    grid = (int(header['grid_h']), int(header['grid_w']))
    count = int(header['count'])
    if grid != mask.grid.shape or count != mask.count:
        raise FormatError(f'stack holds {count} patterns over {grid}, mask has {mask.count} over {mask.grid.shape}', path=path)

    shape = (int(header['det_h']), int(header['det_w']))
    expected = count * shape[0] * shape[1] * _STACK_PAYLOAD.itemsize
    payload = raw[_STACK_HEADER.itemsize:]
    if len(payload) != expected:
        raise FormatError(f'payload is {len(payload)} bytes, expected {expected}', path=path)

    data = np.frombuffer(payload, dtype=_STACK_PAYLOAD).reshape(count, shape[0] * shape[1])
    return PatternStack(mask, shape, data)
