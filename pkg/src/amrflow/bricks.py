"""Merge same-level subgrids into bricks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .amr_model import AMRDataset


@dataclass(frozen=True, eq=False)
class Brick:
    level: int
    lower: tuple[int, int, int]
    dims: tuple[int, int, int]
    # global cell index (into AMRDataset.values columns) of every brick cell, x fastest
    cell_index: np.ndarray = field(repr=False)
    sources: tuple[int, ...] = ()

    @property
    def width(self) -> int:
        return 2**self.level

    @property
    def upper(self) -> tuple[int, int, int]:
        return tuple(lo + n * self.width for lo, n in zip(self.lower, self.dims))

    @property
    def num_cells(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def key(self):
        return (self.level, self.lower, self.dims)


def merge_boxes(items):
    """Greedy face merge of axis-aligned boxes.

    ``items`` is a list of ``(key, lo, hi, members)`` tuples with ``lo``/``hi``
    3-tuples. Two boxes merge when their keys are equal, they share a full
    face along the sweep axis and their cross-sections match. Axes are swept
    x, y, z repeatedly until a full pass changes nothing.
    """
    items = [(k, tuple(lo), tuple(hi), list(m)) for k, lo, hi, m in items]
    changed = True
    while changed:
        changed = False
        for a in range(3):
            b, c = [d for d in range(3) if d != a]
            groups: dict = {}
            for it in items:
                k, lo, hi, _ = it
                groups.setdefault((k, lo[b], hi[b], lo[c], hi[c]), []).append(it)
            merged = []
            for gkey in sorted(groups, key=repr):
                run = sorted(groups[gkey], key=lambda it: it[1][a])
                cur = run[0]
                for nxt in run[1:]:
                    if cur[2][a] == nxt[1][a]:
                        hi = list(cur[2])
                        hi[a] = nxt[2][a]
                        cur = (cur[0], cur[1], tuple(hi), cur[3] + nxt[3])
                        changed = True
                    else:
                        merged.append(cur)
                        cur = nxt
                merged.append(cur)
            items = merged
    return items


def _assemble(ds: AMRDataset, level: int, lo, hi, members) -> Brick:
    w = 2**level
    lo = np.asarray(lo)
    dims = (np.asarray(hi) - lo) // w
    grid = np.empty(dims[::-1], dtype=np.int64)
    for n in members:
        sg = ds.subgrids[n]
        o = (np.asarray(sg.lower) - lo) // w
        nx, ny, nz = sg.dims
        block = np.arange(ds.offsets[n], ds.offsets[n + 1], dtype=np.int64).reshape(nz, ny, nx)
        grid[o[2] : o[2] + nz, o[1] : o[1] + ny, o[0] : o[0] + nx] = block
    return Brick(level, tuple(int(v) for v in lo), tuple(int(v) for v in dims), grid.ravel(), tuple(sorted(members)))


def build_bricks(ds: AMRDataset) -> list[Brick]:
    """Merge face-adjacent same-level subgrids; levels never merge.

    Output is sorted by level, then by lower corner z, y, x.
    """
    items = [(sg.level, sg.lower, sg.upper, [n]) for n, sg in enumerate(ds.subgrids)]
    merged = merge_boxes(items)
    merged.sort(key=lambda it: (it[0], it[1][2], it[1][1], it[1][0]))
    return [_assemble(ds, lvl, lo, hi, members) for lvl, lo, hi, members in merged]


def brick_domain(b: Brick) -> np.ndarray:
    """Brick bounds grown by half a cell on every face, shape ``(2, 3)``."""
    pad = 0.5 * b.width
    return np.array([np.asarray(b.lower, dtype=np.float64) - pad, np.asarray(b.upper, dtype=np.float64) + pad])


class BrickArrays:
    """Flat array view of a brick list, consumed by the reconstruction kernels."""

    def __init__(self, bricks: list[Brick]):
        n = len(bricks)
        self.lower = np.array([b.lower for b in bricks], dtype=np.float64).reshape(n, 3)
        self.dims = np.array([b.dims for b in bricks], dtype=np.int64).reshape(n, 3)
        self.width = np.array([float(b.width) for b in bricks], dtype=np.float64)
        self.level = np.array([b.level for b in bricks], dtype=np.int64)
        self.cell_start = np.zeros(n + 1, dtype=np.int64)
        np.cumsum([b.num_cells for b in bricks], out=self.cell_start[1:])
        self.cells = np.concatenate([b.cell_index for b in bricks]) if bricks else np.zeros(0, dtype=np.int64)
        self.domains = np.array([brick_domain(b) for b in bricks]).reshape(n, 2, 3)

    def __len__(self):
        return len(self.width)
