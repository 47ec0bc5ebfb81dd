"""Progressive particle advection with region-adaptive step sizes.

Each integration stage's displacement is ``v * h * cw`` where ``cw`` is the
finest cell width of the region box the stage sampled, so particles take
small steps in fine regions and large ones in coarse regions. Stages are
scaled individually, which means a step starting in a coarse region can
overshoot a finer region near a level boundary; this is kept on purpose
(``conservative=True`` clamps each stage to the finest width seen so far in
the step).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .amr_model import AMRDataset
from .query import QueryEngine
from .reconstruct import Field, sample_kernel

ACTIVE, LEFT_DOMAIN, STAGNANT, FINISHED = 0, 1, 2, 3
STATUS_NAMES = {ACTIVE: "active", LEFT_DOMAIN: "left_domain", STAGNANT: "stagnant", FINISHED: "finished"}
EULER, RK4 = 0, 1
_INTEGRATORS = {"euler": EULER, "rk4": RK4}


class EmptySelection(ValueError):
    pass


@dataclass(frozen=True)
class TracerConfig:
    integrator: str = "rk4"
    step: float = 0.5
    max_steps: int = 1000
    stagnant_speed_eps: float = 1e-12
    normalize_velocity: bool = False
    batch_size: int = 100
    conservative: bool = False
    literal_queries: bool = False

    def __post_init__(self):
        if self.integrator not in _INTEGRATORS:
            raise ValueError(f"integrator must be one of {sorted(_INTEGRATORS)}")
        if not self.step > 0:
            raise ValueError("step must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.stagnant_speed_eps < 0:
            raise ValueError("stagnant_speed_eps must be >= 0")


@dataclass
class TraceBuffer:
    """Seeds x (max_steps + 1) positions; row ``s`` is the trajectory of seed ``s``."""

    positions: np.ndarray
    steps_taken: np.ndarray
    status: np.ndarray
    counters: np.ndarray = field(repr=False)  # per seed: nodes, leaves, lookups, stage samples

    @classmethod
    def allocate(cls, seeds, max_steps: int) -> "TraceBuffer":
        seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 3)
        pos = np.full((len(seeds), max_steps + 1, 3), np.nan)
        pos[:, 0] = seeds
        n = len(seeds)
        return cls(pos, np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int8), np.zeros((n, 4), dtype=np.int64))

    @property
    def num_seeds(self) -> int:
        return self.positions.shape[0]

    @property
    def max_steps(self) -> int:
        return self.positions.shape[1] - 1

    def trajectory(self, s: int) -> np.ndarray:
        return self.positions[s, : self.steps_taken[s] + 1]

    def status_counts(self) -> dict[str, int]:
        return {name: int(np.sum(self.status == code)) for code, name in STATUS_NAMES.items()}

    def copy(self) -> "TraceBuffer":
        return TraceBuffer(self.positions.copy(), self.steps_taken.copy(), self.status.copy(), self.counters.copy())


# --- seeds --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExplicitList:
    points: np.ndarray


@dataclass(frozen=True)
class UniformInBox:
    box: tuple
    count: int
    rng_seed: int = 0


@dataclass(frozen=True)
class DensityThreshold:
    channel: str
    quantile: float
    count: int
    rng_seed: int = 0


def make_seeds(ds: AMRDataset, spec) -> np.ndarray:
    if isinstance(spec, ExplicitList):
        return np.asarray(spec.points, dtype=np.float64).reshape(-1, 3)
    wb = ds.world_bounds
    if isinstance(spec, UniformInBox):
        box = np.asarray(spec.box, dtype=np.float64).reshape(2, 3)
        lo = np.maximum(box[0], wb[0])
        hi = np.minimum(box[1], wb[1])
        if np.any(hi <= lo):
            raise EmptySelection(f"seed box {box.tolist()} does not intersect world bounds {wb.tolist()}")
        rng = np.random.default_rng(spec.rng_seed)
        return lo + rng.random((spec.count, 3)) * (hi - lo)
    if isinstance(spec, DensityThreshold):
        vals = ds.values[ds.channel_index(spec.channel)]
        if not 0.0 <= spec.quantile <= 1.0:
            raise ValueError("quantile must be in [0, 1]")
        thresh = np.quantile(vals, spec.quantile)
        chosen = np.flatnonzero(vals >= thresh)
        if chosen.size == 0:
            raise EmptySelection(f"no cells of {spec.channel!r} at or above quantile {spec.quantile}")
        centers, widths, _ = ds.cell_centers()
        rng = np.random.default_rng(spec.rng_seed)
        picks = chosen[rng.integers(0, chosen.size, spec.count)]
        offs = rng.random((spec.count, 3)) - 0.5
        return centers[picks] + offs * widths[picks, None]
    raise TypeError(f"unsupported seed spec {spec!r}")


def read_seeds_file(path) -> np.ndarray:
    """Plain text, one ``x y z`` triple per line; ``#`` starts a comment."""
    pts = np.loadtxt(path, comments="#", ndmin=2, dtype=np.float64)
    if pts.size == 0:
        return np.zeros((0, 3))
    if pts.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns, got {pts.shape[1]}")
    return pts


# --- single steps with a Python sampler ---------------------------------------------------


def _scaled(v, h, cw, normalize):
    if normalize:
        n = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
        if n > 0.0:
            v = v / n
    return v * (h * cw)


def euler_step(sample, p, cfg: TracerConfig):
    """One Euler step; ``sample(q)`` returns ``(v, cw)`` or None when outside.

    Returns ``(position, status)`` with status ``ACTIVE`` on success.
    """
    p = np.asarray(p, dtype=np.float64)
    s = sample(p)
    if s is None:
        return p, LEFT_DOMAIN
    v, cw = np.asarray(s[0], dtype=np.float64), s[1]
    if math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) < cfg.stagnant_speed_eps:
        return p, STAGNANT
    return p + _scaled(v, cfg.step, cw, cfg.normalize_velocity), ACTIVE


def rk_step(sample, p, cfg: TracerConfig):
    """One classic RK4 step with per-stage cell-width scaling (see :func:`euler_step`)."""
    p = np.asarray(p, dtype=np.float64)
    h = cfg.step
    s = sample(p)
    if s is None:
        return p, LEFT_DOMAIN
    v1, cw = np.asarray(s[0], dtype=np.float64), s[1]
    if math.sqrt(v1[0] * v1[0] + v1[1] * v1[1] + v1[2] * v1[2]) < cfg.stagnant_speed_eps:
        return p, STAGNANT
    d1 = _scaled(v1, h, cw, cfg.normalize_velocity)
    s = sample(p + d1 * 0.5)
    if s is None:
        return p, LEFT_DOMAIN
    d2 = _scaled(np.asarray(s[0], dtype=np.float64), h, s[1], cfg.normalize_velocity)
    s = sample(p + d2 * 0.5)
    if s is None:
        return p, LEFT_DOMAIN
    d3 = _scaled(np.asarray(s[0], dtype=np.float64), h, s[1], cfg.normalize_velocity)
    s = sample(p + d3)
    if s is None:
        return p, LEFT_DOMAIN
    d4 = _scaled(np.asarray(s[0], dtype=np.float64), h, s[1], cfg.normalize_velocity)
    return p + (d1 + 2.0 * d2 + 2.0 * d3 + d4) / 6.0, ACTIVE


# --- compiled batch advection --------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _stage(eng, rec, fw, q, chans, nq, v, counters, h, normalize, cwmin):
    """Sample at ``q``; writes the scaled displacement into ``v``.

    Returns ``(ok, raw_speed, cw)``.
    """
    status, _, cw = sample_kernel(eng, rec, fw, q, chans, nq, v, counters)
    counters[3] += 1
    if status != 0:
        return False, 0.0, 0.0
    if cw > cwmin:
        cw = cwmin
    speed = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    scale = h * cw
    if normalize and speed > 0.0:
        v[0] = v[0] / speed
        v[1] = v[1] / speed
        v[2] = v[2] / speed
    v[0] = v[0] * scale
    v[1] = v[1] * scale
    v[2] = v[2] * scale
    return True, speed, cw


@numba.njit(cache=True, nogil=True)
def _advance_range(s0, s1, steps, positions, steps_taken, status, counters, eng, rec, fw, chans, nq, integrator, h, eps, normalize, conservative):
    max_steps = positions.shape[1] - 1
    d1 = np.empty(3)
    d2 = np.empty(3)
    d3 = np.empty(3)
    d4 = np.empty(3)
    q = np.empty(3)
    inf = np.inf
    for s in range(s0, s1):
        if status[s] != 0:
            continue
        ctr = counters[s]
        n = steps_taken[s]
        end = min(n + steps, max_steps)
        while n < end:
            p = positions[s, n]
            ok, speed, cw = _stage(eng, rec, fw, p, chans, nq, d1, ctr, h, normalize, inf)
            if not ok:
                status[s] = 1
                break
            if speed < eps:
                status[s] = 2
                break
            if integrator == 0:
                for d in range(3):
                    positions[s, n + 1, d] = p[d] + d1[d]
            else:
                lim = cw if conservative else inf
                for d in range(3):
                    q[d] = p[d] + d1[d] * 0.5
                ok, speed, cw = _stage(eng, rec, fw, q, chans, nq, d2, ctr, h, normalize, lim)
                if not ok:
                    status[s] = 1
                    break
                if conservative:
                    lim = cw
                for d in range(3):
                    q[d] = p[d] + d2[d] * 0.5
                ok, speed, cw = _stage(eng, rec, fw, q, chans, nq, d3, ctr, h, normalize, lim)
                if not ok:
                    status[s] = 1
                    break
                if conservative:
                    lim = cw
                for d in range(3):
                    q[d] = p[d] + d3[d]
                ok, speed, cw = _stage(eng, rec, fw, q, chans, nq, d4, ctr, h, normalize, lim)
                if not ok:
                    status[s] = 1
                    break
                for d in range(3):
                    positions[s, n + 1, d] = p[d] + (d1[d] + 2.0 * d2[d] + 2.0 * d3[d] + d4[d]) / 6.0
            n += 1
        steps_taken[s] = n
        if status[s] == 0 and n == max_steps:
            status[s] = 3


def _chunks(n: int, workers: int):
    workers = max(1, min(workers, n))
    edges = np.linspace(0, n, workers + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def advance(buf: TraceBuffer, engine: QueryEngine, fld: Field, channels, cfg: TracerConfig, steps: int, threads: int = 1) -> TraceBuffer:
    """Advance every active particle by up to ``steps`` integration steps, in place.

    Work is split over ``threads`` workers by contiguous particle ranges; each
    particle's row is written by exactly one worker, so the result does not
    depend on the split.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    chans = fld.channel_ids(channels)
    if len(chans) != 3:
        raise ValueError("advection needs exactly three velocity channels")
    decomp = engine.decomp
    args = (
        steps, buf.positions, buf.steps_taken, buf.status, buf.counters,
        engine.packed(), fld.packed(decomp), decomp.finest_width, chans,
        3 if cfg.literal_queries else 1, _INTEGRATORS[cfg.integrator], float(cfg.step),
        float(cfg.stagnant_speed_eps), bool(cfg.normalize_velocity), bool(cfg.conservative),
    )
    before = buf.counters[:, :3].sum(axis=0)
    ranges = _chunks(buf.num_seeds, threads)
    if len(ranges) <= 1:
        for a, b in ranges:
            _advance_range(a, b, *args)
    else:
        with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
            list(pool.map(lambda r: _advance_range(r[0], r[1], *args), ranges))
    engine.add_counters(buf.counters[:, :3].sum(axis=0) - before)
    return buf


def trace_to_end(seeds, engine: QueryEngine, fld: Field, channels, cfg: TracerConfig, threads: int = 1) -> TraceBuffer:
    """Allocate a buffer and advance in ``cfg.batch_size`` chunks until no particle is active."""
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 3)
    if len(seeds) == 0:
        raise ValueError("no seeds")
    buf = TraceBuffer.allocate(seeds, cfg.max_steps)
    while np.any(buf.status == ACTIVE):
        advance(buf, engine, fld, channels, cfg, cfg.batch_size, threads)
    return buf


def scene_sampler(engine: QueryEngine, fld: Field, channels):
    """Python-level ``sample(q) -> (v, cw) | None`` closure for :func:`rk_step` / :func:`euler_step`."""
    from .reconstruct import DegenerateWeight, OutsideDomain, sample_direction

    def sample(q):
        try:
            return sample_direction(engine, fld, channels, q)
        except (OutsideDomain, DegenerateWeight):
            return None

    return sample

