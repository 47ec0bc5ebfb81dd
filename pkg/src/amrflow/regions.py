"""Active brick regions and their decomposition into disjoint boxes.

Space covered by brick domains is cut into axis-aligned boxes such that every
interior point of a box overlaps exactly the same set of brick domains. Each
box carries that brick list and the finest cell width among the listed bricks,
which drives adaptive step sizes downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .bricks import BrickArrays, merge_boxes

OUTSIDE = -1


@dataclass(frozen=True, eq=False)
class RegionBox:
    bounds: np.ndarray = field(repr=False)  # (2, 3): lower, upper
    brick_ids: tuple[int, ...]
    finest_level: int

    @property
    def finest_cell_width(self) -> float:
        return float(2**self.finest_level)

    @property
    def volume(self) -> float:
        return float(np.prod(self.bounds[1] - self.bounds[0]))


class RegionDecomposition:
    def __init__(self, boxes: list[RegionBox], domain_union_bounds):
        self.boxes = boxes
        self.domain_union_bounds = np.asarray(domain_union_bounds, dtype=np.float64)
        m = len(boxes)
        self.lo = np.array([b.bounds[0] for b in boxes], dtype=np.float64).reshape(m, 3)
        self.hi = np.array([b.bounds[1] for b in boxes], dtype=np.float64).reshape(m, 3)
        # faces on the global maximum are closed so the union stays covered
        self.closed_hi = self.hi == self.domain_union_bounds[1]
        self.brick_start = np.zeros(m + 1, dtype=np.int64)
        np.cumsum([len(b.brick_ids) for b in boxes], out=self.brick_start[1:])
        self.brick_list = np.array([i for b in boxes for i in b.brick_ids], dtype=np.int64)
        self.finest_width = np.array([b.finest_cell_width for b in boxes], dtype=np.float64)

    def __len__(self):
        return len(self.boxes)

    def dump(self) -> str:
        """One line per box: ``lo.x lo.y lo.z hi.x hi.y hi.z level brickIDs...``."""
        lines = []
        for b in self.boxes:
            nums = [f"{v:g}" for v in (*b.bounds[0], *b.bounds[1])]
            lines.append(" ".join(nums + [str(b.finest_level)] + [str(i) for i in b.brick_ids]))
        return "\n".join(lines) + ("\n" if lines else "")


def _choose_split(lo, hi, dom_lo, dom_hi):
    """Split plane for a node, or None when no active domain face cuts its interior."""
    best = None
    center = 0.5 * (lo + hi)
    extent = hi - lo
    for a in range(3):
        faces = np.concatenate([dom_lo[:, a], dom_hi[:, a]])
        faces = faces[(faces > lo[a]) & (faces < hi[a])]
        if faces.size == 0:
            continue
        if best is not None and extent[a] <= extent[best[0]]:
            continue
        faces = np.unique(faces)
        dist = np.abs(faces - center[a])
        # argmin picks the lowest coordinate among equal distances (faces sorted)
        best = (a, float(faces[np.argmin(dist)]))
    return best


def build_regions(bricks: BrickArrays, merge: bool = True) -> RegionDecomposition:
    """Decompose the union of brick domains into same-domain-set boxes.

    Recursive kd-subdivision of the domain-union bounding box: a node becomes
    a leaf once no face plane of a domain overlapping it passes strictly
    through its interior. Empty leaves are dropped; adjacent leaves with equal
    brick lists are face-merged when ``merge`` is set.
    """
    if len(bricks) == 0:
        raise ValueError("cannot build regions from an empty brick list")
    dom_lo = bricks.domains[:, 0, :]
    dom_hi = bricks.domains[:, 1, :]
    union = np.array([dom_lo.min(axis=0), dom_hi.max(axis=0)])

    leaves = []
    stack = [(union[0].copy(), union[1].copy(), np.arange(len(bricks)))]
    while stack:
        lo, hi, cand = stack.pop()
        inside = np.all((dom_lo[cand] < hi) & (dom_hi[cand] > lo), axis=1)
        active = cand[inside]
        if active.size == 0:
            continue
        split = _choose_split(lo, hi, dom_lo[active], dom_hi[active])
        if split is None:
            leaves.append((tuple(int(i) for i in np.sort(active)), tuple(lo), tuple(hi), []))
            continue
        a, s = split
        left_hi = hi.copy()
        left_hi[a] = s
        right_lo = lo.copy()
        right_lo[a] = s
        stack.append((right_lo, hi, active))
        stack.append((lo, left_hi, active))

    if merge:
        leaves = merge_boxes(leaves)
    leaves.sort(key=lambda it: (it[1][2], it[1][1], it[1][0]))
    boxes = [
        RegionBox(np.array([lo, hi], dtype=np.float64), ids, int(bricks.level[list(ids)].min()))
        for ids, lo, hi, _ in leaves
    ]
    return RegionDecomposition(boxes, union)


@numba.njit(cache=True, nogil=True)
def owns(lo, hi, closed_hi, box, p):
    """Half-open ownership test; faces flagged in ``closed_hi`` also own their upper plane."""
    for d in range(3):
        x = p[d]
        if x < lo[box, d]:
            return False
        if x >= hi[box, d]:
            if not (closed_hi[box, d] and x == hi[box, d]):
                return False
    return True


@numba.njit(cache=True, nogil=True)
def linear_locate(lo, hi, closed_hi, p, counters):
    for b in range(lo.shape[0]):
        counters[1] += 1
        if owns(lo, hi, closed_hi, b, p):
            return b
    return -1


def locate_box_linear(decomp: RegionDecomposition, p) -> int | None:
    """Index of the box owning ``p`` by scanning every box, or None when outside."""
    counters = np.zeros(3, dtype=np.int64)
    b = linear_locate(decomp.lo, decomp.hi, decomp.closed_hi, np.asarray(p, dtype=np.float64), counters)
    return None if b < 0 else int(b)
