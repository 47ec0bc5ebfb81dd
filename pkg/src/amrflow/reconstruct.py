"""Hat-basis reconstruction of cell-centric AMR fields at arbitrary points.

The value at ``p`` is the hat-weighted average of every cell whose support
box (center +- one cell width) contains ``p``::

    B(p) = sum_i H_i(p) v_i / sum_i H_i(p)
    H_i(p) = prod_d max(1 - |c_id - p_d| / w_i, 0)

Normalising by the weight sum compensates for coarse cells having wider
tents than their fine neighbours at level boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .bricks import BrickArrays
from .query import QueryEngine, engine_locate

OK, OUTSIDE, DEGENERATE = 0, 1, 2


class OutsideDomain(LookupError):
    pass


class DegenerateWeight(ArithmeticError):
    """Zero total hat weight inside an owned region box."""


@dataclass(frozen=True)
class SampleResult:
    value: float | np.ndarray
    weight_sum: float
    finest_cell_width: float


def hat_weight(center, width: float, p) -> float:
    w = 1.0
    for c, x in zip(center, p):
        w *= max(1.0 - abs(c - x) / width, 0.0)
    return w


@numba.njit(cache=True, nogil=True)
def accumulate(rec, box, p, chans, acc):
    """Add ``H*v`` per requested channel into ``acc[:-1]`` and ``H`` into ``acc[-1]``.

    Only the up to 2x2x2 cells of each listed brick whose tents can reach
    ``p`` are visited; neighbours outside a brick are covered by the other
    bricks listed for the same region.
    """
    brick_start, brick_list, b_lower, b_dims, b_width, b_cell_start, b_cells, values = rec
    nch = chans.shape[0]
    for k in range(brick_start[box], brick_start[box + 1]):
        b = brick_list[k]
        w = b_width[b]
        nx = b_dims[b, 0]
        ny = b_dims[b, 1]
        nz = b_dims[b, 2]
        ix0 = int(np.floor((p[0] - b_lower[b, 0]) / w - 0.5))
        iy0 = int(np.floor((p[1] - b_lower[b, 1]) / w - 0.5))
        iz0 = int(np.floor((p[2] - b_lower[b, 2]) / w - 0.5))
        base = b_cell_start[b]
        for iz in range(iz0, iz0 + 2):
            if iz < 0 or iz >= nz:
                continue
            hz = 1.0 - abs(b_lower[b, 2] + (iz + 0.5) * w - p[2]) / w
            if hz <= 0.0:
                continue
            for iy in range(iy0, iy0 + 2):
                if iy < 0 or iy >= ny:
                    continue
                hy = 1.0 - abs(b_lower[b, 1] + (iy + 0.5) * w - p[1]) / w
                if hy <= 0.0:
                    continue
                for ix in range(ix0, ix0 + 2):
                    if ix < 0 or ix >= nx:
                        continue
                    hx = 1.0 - abs(b_lower[b, 0] + (ix + 0.5) * w - p[0]) / w
                    if hx <= 0.0:
                        continue
                    h = hx * hy * hz
                    cell = b_cells[base + ix + nx * (iy + ny * iz)]
                    for c in range(nch):
                        acc[c] += h * values[chans[c], cell]
                    acc[nch] += h


@numba.njit(cache=True, nogil=True)
def sample_kernel(eng, rec, finest_width, p, chans, nqueries, out, counters):
    """Reconstruct ``chans`` at ``p`` into ``out``.

    Returns ``(status, weight_sum, finest_cell_width)``. ``nqueries > 1``
    repeats the region lookup, mimicking one containment query per channel.
    """
    box = -1
    for _ in range(nqueries):
        box = engine_locate(eng, p, counters)
    if box < 0:
        return OUTSIDE, 0.0, 0.0
    nch = chans.shape[0]
    acc = np.zeros(nch + 1)
    accumulate(rec, box, p, chans, acc)
    wsum = acc[nch]
    if wsum == 0.0:
        return DEGENERATE, 0.0, finest_width[box]
    for c in range(nch):
        out[c] = acc[c] / wsum
    return OK, wsum, finest_width[box]


class Field:
    """Bricks plus the dataset storage they index, ready for sampling."""

    def __init__(self, bricks: BrickArrays, values: np.ndarray, channels):
        self.bricks = bricks
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.channels = list(channels)

    def channel_ids(self, names) -> np.ndarray:
        ids = []
        for c in names:
            if isinstance(c, (int, np.integer)):
                ids.append(int(c))
            else:
                if c not in self.channels:
                    raise KeyError(f"unknown channel {c!r}; have {self.channels}")
                ids.append(self.channels.index(c))
        return np.array(ids, dtype=np.int64)

    def packed(self, decomp):
        b = self.bricks
        return (decomp.brick_start, decomp.brick_list, b.lower, b.dims, b.width, b.cell_start, b.cells, self.values)


def _sample(engine: QueryEngine, fld: Field, chans, p, nqueries=1):
    p = np.asarray(p, dtype=np.float64).reshape(3)
    out = np.zeros(len(chans))
    counters = np.zeros(3, dtype=np.int64)
    status, wsum, cw = sample_kernel(
        engine.packed(), fld.packed(engine.decomp), engine.decomp.finest_width, p, chans, nqueries, out, counters
    )
    engine.add_counters(counters)
    if status == OUTSIDE:
        raise OutsideDomain(f"point {p.tolist()} lies outside every region box")
    if status == DEGENERATE:
        raise DegenerateWeight(f"zero hat weight at {p.tolist()}")
    return out, wsum, cw


def sample_scalar(engine: QueryEngine, fld: Field, channel, p) -> SampleResult:
    out, wsum, cw = _sample(engine, fld, fld.channel_ids([channel]), p)
    return SampleResult(float(out[0]), wsum, cw)


def sample_direction(engine: QueryEngine, fld: Field, channels, p, literal_queries: bool = False):
    """Vector sample from three channels sharing one region lookup.

    Returns ``(vector, finest_cell_width)``. ``literal_queries`` performs
    three lookups instead of one (same result, three times the traversal work).
    """
    chans = fld.channel_ids(channels)
    if len(chans) != 3:
        raise ValueError("direction sampling needs exactly three channels")
    out, _, cw = _sample(engine, fld, chans, p, 3 if literal_queries else 1)
    return out, cw


@numba.njit(cache=True, nogil=True)
def _sample_many(eng, rec, finest_width, points, chans, out, status, counters):
    for i in range(points.shape[0]):
        st, _, _ = sample_kernel(eng, rec, finest_width, points[i], chans, 1, out[i], counters)
        status[i] = st


def sample_many(engine: QueryEngine, fld: Field, channels, points):
    """Reconstruct ``channels`` at many points.

    Returns ``(values, status)``; ``values`` is ``(N, n_channels)`` and is
    NaN where ``status`` is not ``OK``.
    """
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    chans = fld.channel_ids(channels)
    out = np.zeros((len(points), len(chans)))
    status = np.zeros(len(points), dtype=np.int64)
    counters = np.zeros(3, dtype=np.int64)
    _sample_many(engine.packed(), fld.packed(engine.decomp), engine.decomp.finest_width, points, chans, out, status, counters)
    engine.add_counters(counters)
    out[status != OK] = np.nan
    return out, status


def brute_force_sample(ds, channels, p):
    """Basis reconstruction summed over every cell of the dataset, no acceleration.

    Returns ``(values, weight_sum)``; independent of bricks and regions.
    """
    centers, widths, _ = ds.cell_centers()
    p = np.asarray(p, dtype=np.float64)
    h = np.prod(np.maximum(1.0 - np.abs(centers - p) / widths[:, None], 0.0), axis=1)
    wsum = h.sum()
    chans = [ds.channel_index(c) if isinstance(c, str) else int(c) for c in channels]
    vals = np.array([np.dot(h, ds.values[c]) for c in chans])
    return vals / wsum if wsum > 0 else np.full(len(chans), np.nan), wsum
