"""Point containment engines: point -> owning region box.

Three interchangeable engines answer the same question and must agree on
every point, including the outside verdict:

* ``bvh``: binary BVH over region boxes, traversed like a ray whose
  ``t_min == t_max == 0`` so that only the origin matters;
* ``kdtree``: space partition built from region box faces, one
  root-to-leaf descent per query;
* ``brute``: linear scan over all boxes (the oracle).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numba
import numpy as np

from .regions import RegionDecomposition, linear_locate, owns

ENGINES = ("bvh", "kdtree", "brute")
KIND_BRUTE, KIND_BVH, KIND_KD = 0, 1, 2
STACK_DEPTH = 64
BVH_LEAF_SIZE = 1


class StatsDisabled(RuntimeError):
    pass


@dataclass(frozen=True)
class PointQuery:
    """A ray of length zero; only ``origin`` takes part in containment."""

    origin: tuple[float, float, float]
    t_min: float = 0.0
    t_max: float = 0.0
    direction: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.t_min != 0.0 or self.t_max != 0.0:
            raise ValueError("point queries need t_min == t_max == 0")
        if not any(self.direction):
            raise ValueError("direction must be non-zero")


@dataclass(frozen=True)
class RegionHit:
    box_index: int
    brick_ids: np.ndarray
    finest_cell_width: float

    def key(self):
        return (self.box_index, tuple(int(i) for i in self.brick_ids))


@dataclass(frozen=True)
class QueryStats:
    nodes_visited: int = 0
    leaves_tested: int = 0
    queries: int = 0


# --- traversal kernels ---------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _node_contains(nlo, nhi, n, p):
    for d in range(3):
        if p[d] < nlo[n, d] or p[d] > nhi[n, d]:
            return False
    return True


@numba.njit(cache=True, nogil=True)
def bvh_locate(nlo, nhi, child, prange_, prim, lo, hi, closed_hi, p, counters):
    if not _node_contains(nlo, nhi, 0, p):
        return -1
    stack = np.empty(STACK_DEPTH, dtype=np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        n = stack[sp]
        counters[0] += 1
        if child[n, 0] < 0:
            for k in range(prange_[n, 0], prange_[n, 0] + prange_[n, 1]):
                b = prim[k]
                counters[1] += 1
                # boxes are interior-disjoint: the first owner is the only owner
                if owns(lo, hi, closed_hi, b, p):
                    return b
            continue
        for c in (child[n, 1], child[n, 0]):
            if _node_contains(nlo, nhi, c, p):
                if sp >= STACK_DEPTH:
                    raise RuntimeError("BVH traversal stack overflow")
                stack[sp] = c
                sp += 1
    return -1


@numba.njit(cache=True, nogil=True)
def kd_locate(root, split, node, leaf_box, lo, hi, closed_hi, p, counters):
    for d in range(3):
        if p[d] < root[0, d] or p[d] > root[1, d]:
            return -1
    n = 0
    while True:
        counters[0] += 1
        axis = node[n, 0]
        if axis < 0:
            break
        if p[axis] < split[n, 0]:
            n = node[n, 1]
        else:
            n = node[n, 2]
    b = leaf_box[n, 0]
    if b < 0:
        return -1
    counters[1] += 1
    if owns(lo, hi, closed_hi, b, p):
        return b
    return -1


@numba.njit(cache=True, nogil=True)
def engine_locate(eng, p, counters):
    """Dispatch on the packed engine tuple built by :meth:`QueryEngine.packed`."""
    kind, fa, fb, ia, ib, prim, lo, hi, closed_hi = eng
    counters[2] += 1
    if kind == KIND_BVH:
        return bvh_locate(fa, fb, ia, ib, prim, lo, hi, closed_hi, p, counters)
    if kind == KIND_KD:
        return kd_locate(fa, fb, ia, ib, lo, hi, closed_hi, p, counters)
    return linear_locate(lo, hi, closed_hi, p, counters)


@numba.njit(cache=True, nogil=True)
def _locate_many(eng, points, out, counters):
    for i in range(points.shape[0]):
        out[i] = engine_locate(eng, points[i], counters)


# --- builders ------------------------------------------------------------------------


def _build_bvh(decomp: RegionDecomposition):
    lo, hi = decomp.lo, decomp.hi
    centroid = 0.5 * (lo + hi)
    nodes_lo, nodes_hi, child, ranges = [], [], [], []
    prim = np.arange(len(decomp), dtype=np.int64)

    def new_node(start, end):
        idx = prim[start:end]
        nodes_lo.append(lo[idx].min(axis=0))
        nodes_hi.append(hi[idx].max(axis=0))
        child.append([-1, -1])
        ranges.append([start, end - start])
        return len(child) - 1

    root = new_node(0, len(prim))
    stack = [(root, 0, len(prim), 1)]
    max_depth = 1
    while stack:
        n, start, end, depth = stack.pop()
        max_depth = max(max_depth, depth)
        if end - start <= BVH_LEAF_SIZE:
            continue
        idx = prim[start:end]
        c = centroid[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        order = np.argsort(c[:, axis], kind="stable")
        prim[start:end] = idx[order]
        mid = start + (end - start) // 2
        left = new_node(start, mid)
        right = new_node(mid, end)
        child[n] = [left, right]
        ranges[n] = [0, 0]
        stack.append((right, mid, end, depth + 1))
        stack.append((left, start, mid, depth + 1))
    if max_depth >= STACK_DEPTH:
        raise RuntimeError(f"BVH depth {max_depth} exceeds traversal stack")
    return (
        np.array(nodes_lo, dtype=np.float64),
        np.array(nodes_hi, dtype=np.float64),
        np.array(child, dtype=np.int64),
        np.array(ranges, dtype=np.int64),
        prim,
    )


def _build_kdtree(decomp: RegionDecomposition):
    lo, hi = decomp.lo, decomp.hi
    root = decomp.domain_union_bounds.copy()
    split, node, leaf = [], [], []

    def add():
        split.append([0.0])
        node.append([-1, -1, -1])
        leaf.append([-1])
        return len(node) - 1

    stack = [(add(), root[0].copy(), root[1].copy(), np.arange(len(decomp)))]
    while stack:
        n, clo, chi, cand = stack.pop()
        cand = cand[np.all((lo[cand] < chi) & (hi[cand] > clo), axis=1)]
        if cand.size <= 1:
            leaf[n] = [int(cand[0]) if cand.size else -1]
            continue
        best = None
        for a in range(3):
            faces = np.concatenate([lo[cand, a], hi[cand, a]])
            faces = np.unique(faces[(faces > clo[a]) & (faces < chi[a])])
            if faces.size and (best is None or chi[a] - clo[a] > chi[best[0]] - clo[best[0]]):
                best = (a, float(faces[faces.size // 2]))
        # two interior-disjoint boxes in one cell always leave a separating face inside it
        assert best is not None
        a, s = best
        left, right = add(), add()
        split[n] = [s]
        node[n] = [a, left, right]
        lhi = chi.copy()
        lhi[a] = s
        rlo = clo.copy()
        rlo[a] = s
        stack.append((right, rlo, chi, cand))
        stack.append((left, clo, lhi, cand))
    return (
        root,
        np.array(split, dtype=np.float64),
        np.array(node, dtype=np.int64),
        np.array(leaf, dtype=np.int64),
    )


class QueryEngine:
    """Point -> region box lookup over a :class:`RegionDecomposition`."""

    def __init__(self, decomp: RegionDecomposition, kind: str = "bvh", stats: bool = False):
        if len(decomp) == 0:
            raise ValueError("empty region decomposition")
        if kind not in ENGINES:
            raise ValueError(f"unknown engine {kind!r}; expected one of {ENGINES}")
        self.decomp = decomp
        self.kind = kind
        self.stats_enabled = stats
        self._lock = threading.Lock()
        self._counters = np.zeros(3, dtype=np.int64)
        f0 = np.zeros((0, 3))
        i0 = np.zeros((0, 3), dtype=np.int64)
        if kind == "bvh":
            nlo, nhi, child, ranges, prim = _build_bvh(decomp)
            self.num_nodes = len(child)
            self._packed = (KIND_BVH, nlo, nhi, child, ranges, prim)
        elif kind == "kdtree":
            root, split, node, leaf = _build_kdtree(decomp)
            self.num_nodes = len(node)
            self._packed = (KIND_KD, root, split, node, leaf, np.zeros(0, dtype=np.int64))
        else:
            self.num_nodes = 0
            self._packed = (KIND_BRUTE, f0, f0, i0, i0, np.zeros(0, dtype=np.int64))
        self._packed = self._packed + (decomp.lo, decomp.hi, decomp.closed_hi)

    def packed(self):
        return self._packed

    def _record(self, counters):
        if self.stats_enabled:
            with self._lock:
                self._counters += counters

    def locate(self, p) -> int:
        """Owning box index, or ``-1`` when ``p`` is outside every box."""
        counters = np.zeros(3, dtype=np.int64)
        b = engine_locate(self._packed, np.asarray(p, dtype=np.float64).reshape(3), counters)
        self._record(counters)
        return int(b)

    def locate_many(self, points) -> np.ndarray:
        points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        out = np.empty(len(points), dtype=np.int64)
        counters = np.zeros(3, dtype=np.int64)
        _locate_many(self._packed, points, out, counters)
        self._record(counters)
        return out

    def hit(self, box: int) -> RegionHit:
        d = self.decomp
        return RegionHit(box, d.brick_list[d.brick_start[box] : d.brick_start[box + 1]], float(d.finest_width[box]))

    def query(self, q) -> RegionHit | None:
        """Trace a zero-length ray; returns the owning box's hit or None when outside."""
        origin = q.origin if isinstance(q, PointQuery) else q
        b = self.locate(origin)
        return None if b < 0 else self.hit(b)

    def stats(self) -> QueryStats:
        if not self.stats_enabled:
            raise StatsDisabled(f"{self.kind} engine was built without stats")
        with self._lock:
            n, l, q = (int(v) for v in self._counters)
        return QueryStats(nodes_visited=n, leaves_tested=l, queries=q)

    def reset_stats(self):
        with self._lock:
            self._counters[:] = 0

    def add_counters(self, counters):
        """Fold externally gathered ``[nodes, leaves, queries]`` counts into the totals."""
        self._record(np.asarray(counters, dtype=np.int64))


def build_bvh(decomp: RegionDecomposition, stats: bool = False) -> QueryEngine:
    return QueryEngine(decomp, "bvh", stats)


def build_kdtree(decomp: RegionDecomposition, stats: bool = False) -> QueryEngine:
    return QueryEngine(decomp, "kdtree", stats)


def build_brute(decomp: RegionDecomposition, stats: bool = False) -> QueryEngine:
    return QueryEngine(decomp, "brute", stats)


def query_stats(engine: QueryEngine) -> QueryStats:
    return engine.stats()
