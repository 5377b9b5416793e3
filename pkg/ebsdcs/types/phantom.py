from __future__ import annotations
from typing import List, TypedDict

class Grains(TypedDict):
    height: int
    width: int
    labels: List[int]
    orientations: List[List[float]]
