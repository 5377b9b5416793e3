from __future__ import annotations
from typing import Any, Dict, Literal, Optional, TypedDict
from typing_extensions import NotRequired

class Normalization(TypedDict):
    height: int
    width: int
    source_min: float
    source_max: float
    target_lo: float
    target_hi: float

class Provenance(TypedDict):
    seed: NotRequired[Optional[int]]
    config_hash: NotRequired[Optional[str]]
    command: NotRequired[str]
    version: str

class MapSidecar(TypedDict):
    kind: Literal['band_contrast', 'ipf']
    image: str
    height: int
    width: int
    normalization: NotRequired[Optional[Normalization]]
    mask: NotRequired[Optional[str]]
    provenance: Provenance
    extra: NotRequired[Dict[str, Any]]
