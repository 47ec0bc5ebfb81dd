"""Dataset -> bricks -> regions -> engines, built once and shared."""

from __future__ import annotations

from .amr_model import AMRDataset
from .bricks import BrickArrays, build_bricks
from .query import QueryEngine
from .reconstruct import Field
from .regions import build_regions


class Scene:
    def __init__(self, ds: AMRDataset):
        self.dataset = ds
        self.bricks = build_bricks(ds)
        self.brick_arrays = BrickArrays(self.bricks)
        self.regions = build_regions(self.brick_arrays)
        self.field = Field(self.brick_arrays, ds.values, ds.channels)
        self._engines: dict = {}

    def engine(self, kind: str = "bvh", stats: bool = False) -> QueryEngine:
        key = (kind, stats)
        if key not in self._engines:
            self._engines[key] = QueryEngine(self.regions, kind, stats)
        return self._engines[key]
