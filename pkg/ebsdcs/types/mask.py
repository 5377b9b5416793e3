from __future__ import annotations
from typing import List, TypedDict
from typing_extensions import NotRequired

class Mask(TypedDict):
    height: int
    width: int
    sampled: List[int]
    zsp: NotRequired[List[int]]
