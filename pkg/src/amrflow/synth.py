"""Synthetic multi-level AMR datasets built from analytic fields.

Blocks of ``block_size**3`` cells are laid out octree style: the bounds are
tiled with blocks at the coarsest level and a block is split into eight
children one level finer whenever the refinement rule asks for it. Every
emitted block becomes one subgrid. Cell values are the analytic field at
cell centers, rounded through float32 so the in-memory dataset equals what
the on-disk format stores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .amr_model import AMRDataset, Subgrid, write_dataset  # noqa: F401  (re-exported)

VELOCITY = ("velx", "vely", "velz")
CHANNELS = (*VELOCITY, "rho")


class InvalidTiling(ValueError):
    pass


# --- analytic fields ---------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    value: tuple = (1.0, 0.0, 0.0)

    def __call__(self, x):
        return np.broadcast_to(np.asarray(self.value, dtype=np.float64), x.shape).copy()


@dataclass(frozen=True)
class RigidRotation:
    """``omega * axis x (x - center)``; the default is ``(-y, x, 0)``."""

    center: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)
    omega: float = 1.0

    def __call__(self, x):
        r = x - np.asarray(self.center, dtype=np.float64)
        return self.omega * np.cross(np.asarray(self.axis, dtype=np.float64), r)


@dataclass(frozen=True)
class ABCFlow:
    A: float = np.sqrt(3.0)
    B: float = np.sqrt(2.0)
    C: float = 1.0
    scale: float = 1.0  # world units -> radians

    def __call__(self, x):
        u = x * self.scale
        X, Y, Z = u[..., 0], u[..., 1], u[..., 2]
        return np.stack(
            [
                self.A * np.sin(Z) + self.C * np.cos(Y),
                self.B * np.sin(X) + self.A * np.cos(Z),
                self.C * np.sin(Y) + self.B * np.cos(X),
            ],
            axis=-1,
        )


@dataclass(frozen=True)
class RadialGaussianDensity:
    center: tuple = (0.0, 0.0, 0.0)
    sigma: float = 1.0

    def __call__(self, x):
        r2 = np.sum((x - np.asarray(self.center, dtype=np.float64)) ** 2, axis=-1)
        return np.exp(-0.5 * r2 / self.sigma**2)


# --- refinement rules ----------------------------------------------------------------------


def _box_overlaps(lo, hi, box) -> bool:
    box = np.asarray(box, dtype=np.float64).reshape(2, 3)
    return bool(np.all(lo < box[1]) and np.all(hi > box[0]))


@dataclass(frozen=True)
class UniformLevel:
    level: int = 0

    @property
    def coarsest(self):
        return self.level

    def refine(self, lo, hi, level, fields) -> bool:
        return level > self.level


@dataclass(frozen=True)
class RefineInsideBox:
    """``finer_level`` for blocks overlapping ``box``, ``coarser_level`` elsewhere."""

    box: tuple
    finer_level: int = 0
    coarser_level: int = 1

    @property
    def coarsest(self):
        return self.coarser_level

    def refine(self, lo, hi, level, fields) -> bool:
        target = self.finer_level if _box_overlaps(lo, hi, self.box) else self.coarser_level
        return level > target


@dataclass(frozen=True)
class NestedBoxes:
    """Several :class:`RefineInsideBox` regions; a block takes the finest level of any box it overlaps."""

    boxes: tuple  # ((box, level), ...)
    base_level: int = 2

    @property
    def coarsest(self):
        return self.base_level

    def refine(self, lo, hi, level, fields) -> bool:
        target = min([lvl for box, lvl in self.boxes if _box_overlaps(lo, hi, box)], default=self.base_level)
        return level > target


@dataclass(frozen=True)
class RefineByGradient:
    """Refine while neighbouring cell values of ``channel`` differ by more than ``threshold``.

    ``levels`` is ``(finest, coarsest)``.
    """

    channel: str
    threshold: float
    levels: tuple = (0, 2)

    @property
    def coarsest(self):
        return self.levels[1]

    def refine(self, lo, hi, level, fields) -> bool:
        if level <= self.levels[0]:
            return False
        w = 2.0**level
        axes = [np.arange(a + 0.5 * w, b, w) for a, b in zip(lo, hi)]
        z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        vals = fields[self.channel](np.stack([x, y, z], axis=-1))
        jump = max(float(np.abs(np.diff(vals, axis=a)).max(initial=0.0)) for a in range(3))
        return jump > self.threshold


# --- generation -------------------------------------------------------------------------------


def _channel_fields(field, density):
    fields = {name: (lambda x, i=i: field(x)[..., i]) for i, name in enumerate(VELOCITY)}
    fields["rho"] = density
    return fields


def generate(bounds, field, rule, block_size: int = 4, density=None) -> AMRDataset:
    """Tile integer ``bounds`` (``[[x0,y0,z0],[x1,y1,z1]]``) with refined blocks.

    Channels are ``velx, vely, velz`` from ``field`` and ``rho`` from
    ``density`` (a Gaussian centred in the bounds by default).
    """
    bounds = np.asarray(bounds, dtype=np.int64).reshape(2, 3)
    top = block_size * 2**rule.coarsest
    if block_size < 1 or np.any(bounds[1] <= bounds[0]):
        raise InvalidTiling(f"bad bounds {bounds.tolist()} or block size {block_size}")
    if np.any((bounds[1] - bounds[0]) % top) or np.any(bounds[0] % 2**rule.coarsest):
        raise InvalidTiling(f"bounds {bounds.tolist()} not divisible into blocks of {top} (block size {block_size})")
    if density is None:
        ext = bounds[1] - bounds[0]
        density = RadialGaussianDensity(tuple(0.5 * (bounds[0] + bounds[1])), float(ext.min()) / 6.0)
    fields = _channel_fields(field, density)

    subgrids = []

    def emit(lo, level):
        w = 2**level
        hi = lo + block_size * w
        if level > 0 and rule.refine(lo, hi, level, fields):
            half = block_size * w // 2
            for dz in (0, half):
                for dy in (0, half):
                    for dx in (0, half):
                        emit(lo + np.array([dx, dy, dz]), level - 1)
            return
        c = (np.arange(block_size) + 0.5) * w
        z, y, x = np.meshgrid(lo[2] + c, lo[1] + c, lo[0] + c, indexing="ij")
        pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
        vel = field(pts)
        data = np.vstack([vel.T, density(pts)[None, :]]).astype(np.float32).astype(np.float64)
        subgrids.append(Subgrid(level, tuple(int(v) for v in lo), (block_size,) * 3, data))

    for z0 in range(bounds[0, 2], bounds[1, 2], top):
        for y0 in range(bounds[0, 1], bounds[1, 1], top):
            for x0 in range(bounds[0, 0], bounds[1, 0], top):
                emit(np.array([x0, y0, z0], dtype=np.int64), rule.coarsest)
    return AMRDataset(CHANNELS, subgrids)


# --- presets ---------------------------------------------------------------------------------------


def _preset_table():
    return {
        "uniform": dict(bounds=[[0, 0, 0], [8, 8, 8]], field=Constant((1.0, 0.0, 0.0)), rule=UniformLevel(0)),
        "two-level-slab": dict(
            bounds=[[0, 0, 0], [32, 16, 16]],
            field=Constant((1.0, 0.0, 0.0)),
            rule=RefineInsideBox(((0, 0, 0), (16, 16, 16)), 0, 1),
        ),
        # level 0 fills [-8, 8]^3, level 1 the shell out to 16, level 2 the rest
        "three-level-core-rotation": dict(
            bounds=[[-32, -32, -32], [32, 32, 32]],
            field=RigidRotation(),
            rule=NestedBoxes(((((-4, -4, -4), (4, 4, 4)), 0), (((-12, -12, -12), (12, 12, 12)), 1)), 2),
        ),
        "abc-multilevel": dict(
            bounds=[[0, 0, 0], [32, 32, 32]],
            field=ABCFlow(scale=2 * np.pi / 32),
            rule=RefineByGradient("rho", 0.15, (0, 2)),
            block_size=2,
        ),
        # rotation about the box center keeps advected particles inside for long runs
        "many-regions": dict(
            bounds=[[0, 0, 0], [64, 64, 64]],
            field=RigidRotation(center=(32.0, 32.0, 32.0)),
            rule=RefineByGradient("rho", 0.08, (0, 3)),
            density=RadialGaussianDensity((32.0, 32.0, 32.0), 10.0),
            block_size=2,
        ),
    }


PRESETS = tuple(_preset_table())


def preset(name: str, block_size: int | None = None) -> AMRDataset:
    table = _preset_table()
    if name not in table:
        raise KeyError(f"unknown preset {name!r}; have {sorted(table)}")
    p = table[name]
    bs = block_size if block_size is not None else p.get("block_size", 4)
    return generate(p["bounds"], p["field"], p["rule"], bs, p.get("density"))


def preset_field(name: str):
    """The analytic velocity field a preset was sampled from."""
    return _preset_table()[name]["field"]
