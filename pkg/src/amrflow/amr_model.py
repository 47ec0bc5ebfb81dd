"""Cell-centric AMR data model, on-disk format and structural validation.

World units are finest-level logical grid units: a cell on level ``L`` has
width ``2**L`` and level 0 is the finest. Subgrid corners are integer
coordinates in those units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DESCRIPTOR_NAME = "dataset.json"
PAYLOAD_NAME = "payload.bin"


class DatasetError(Exception):
    """Base class for dataset loading and validation failures."""


class MalformedDescriptor(DatasetError):
    pass


class MissingRawFile(DatasetError):
    pass


class ValidationError(DatasetError):
    """Structural invariant violated."""


class AlignmentError(ValidationError):
    def __init__(self, subgrid: int, reason: str):
        self.subgrid = subgrid
        super().__init__(f"subgrid {subgrid}: {reason}")


class OverlapError(ValidationError):
    def __init__(self, subgrid_a: int, subgrid_b: int):
        self.subgrid_a = subgrid_a
        self.subgrid_b = subgrid_b
        super().__init__(f"subgrids {subgrid_a} and {subgrid_b} overlap")


class CoverageGap(ValidationError):
    def __init__(self, point):
        self.point = tuple(float(v) for v in point)
        x, y, z = self.point
        super().__init__(f"no cell covers world point ({x:g}, {y:g}, {z:g})")


class ValidationFailure(DatasetError):
    """Raised by :func:`load_dataset` when the loaded dataset is invalid."""

    def __init__(self, cause: ValidationError):
        self.cause = cause
        super().__init__(str(cause))


def cell_width(level: int) -> float:
    return float(2**level)


@dataclass(frozen=True)
class LevelSpec:
    level: int

    @property
    def cell_width(self) -> float:
        return cell_width(self.level)


@dataclass(frozen=True)
class Cell:
    center: tuple[float, float, float]
    width: float
    value: float


@dataclass(frozen=True, eq=False)
class Subgrid:
    """Block of same-level cells.

    ``data`` has shape ``(n_channels, nx*ny*nz)`` with x varying fastest.
    """

    level: int
    lower: tuple[int, int, int]
    dims: tuple[int, int, int]
    data: np.ndarray = field(repr=False)

    @property
    def num_cells(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def width(self) -> int:
        return 2**self.level

    @property
    def upper(self) -> tuple[int, int, int]:
        w = self.width
        return tuple(lo + n * w for lo, n in zip(self.lower, self.dims))


class AMRDataset:
    """Immutable collection of subgrids sharing a channel list.

    Channel values of all subgrids are concatenated into ``values`` of shape
    ``(n_channels, total_cells)``; subgrid ``i`` occupies the slice starting
    at ``offsets[i]``.
    """

    def __init__(self, channels, subgrids, world_bounds=None):
        self.channels = list(channels)
        self.subgrids = list(subgrids)
        nch = len(self.channels)
        counts = [sg.num_cells for sg in self.subgrids]
        self.offsets = np.zeros(len(counts) + 1, dtype=np.int64)
        np.cumsum(counts, out=self.offsets[1:])
        if self.subgrids:
            self.values = np.concatenate(
                [np.asarray(sg.data, dtype=np.float64).reshape(nch, -1) for sg in self.subgrids], axis=1
            )
        else:
            self.values = np.zeros((nch, 0))
        self.values.setflags(write=False)
        if world_bounds is None:
            world_bounds = self._footprint()
        self.world_bounds = np.asarray(world_bounds, dtype=np.float64).reshape(2, 3)

    def _footprint(self):
        if not self.subgrids:
            return np.zeros((2, 3))
        lo = np.min([sg.lower for sg in self.subgrids], axis=0)
        hi = np.max([sg.upper for sg in self.subgrids], axis=0)
        return np.array([lo, hi], dtype=np.float64)

    @property
    def max_level(self) -> int:
        return max((sg.level for sg in self.subgrids), default=0)

    @property
    def num_cells(self) -> int:
        return int(self.offsets[-1])

    def channel_index(self, name: str) -> int:
        try:
            return self.channels.index(name)
        except ValueError:
            raise KeyError(f"unknown channel {name!r}; have {self.channels}") from None

    def channel_values(self, sg: int, channel: int) -> np.ndarray:
        return self.values[channel, self.offsets[sg] : self.offsets[sg + 1]]

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Centers ``(N, 3)``, widths ``(N,)`` and levels ``(N,)`` of every cell, in storage order."""
        centers, widths, levels = [], [], []
        for sg in self.subgrids:
            nx, ny, nz = sg.dims
            k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
            ijk = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
            centers.append(np.asarray(sg.lower, dtype=np.float64) + (ijk + 0.5) * sg.width)
            widths.append(np.full(sg.num_cells, float(sg.width)))
            levels.append(np.full(sg.num_cells, sg.level, dtype=np.int64))
        if not centers:
            return np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int64)
        return np.concatenate(centers), np.concatenate(widths), np.concatenate(levels)

    def cells_per_level(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for sg in self.subgrids:
            out[sg.level] = out.get(sg.level, 0) + sg.num_cells
        return out


def cell_at(ds: AMRDataset, subgrid: int, ijk, channel: int) -> Cell:
    sg = ds.subgrids[subgrid]
    i, j, k = (int(v) for v in ijk)
    nx, ny, nz = sg.dims
    if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
        raise IndexError(f"cell index {(i, j, k)} outside subgrid dims {sg.dims}")
    w = sg.width
    center = tuple(float(lo + (c + 0.5) * w) for lo, c in zip(sg.lower, (i, j, k)))
    flat = i + nx * (j + ny * k)
    return Cell(center=center, width=float(w), value=float(ds.channel_values(subgrid, channel)[flat]))


def validate_dataset(ds: AMRDataset) -> None:
    """Raise a :class:`ValidationError` unless ``ds`` tiles its world bounds exactly.

    Checks run in order: channel names, per-subgrid shape and alignment,
    pairwise overlap, then coverage of ``ds.world_bounds``.
    """
    if len(set(ds.channels)) != len(ds.channels):
        raise ValidationError(f"duplicate channel names in {ds.channels}")
    if not ds.subgrids:
        raise ValidationError("dataset has no subgrids")
    nch = len(ds.channels)
    for n, sg in enumerate(ds.subgrids):
        if sg.level < 0:
            raise AlignmentError(n, f"negative level {sg.level}")
        if any(d < 1 for d in sg.dims):
            raise AlignmentError(n, f"dims {sg.dims} must be >= 1")
        if any(lo % sg.width for lo in sg.lower):
            raise AlignmentError(n, f"lower {sg.lower} not divisible by {sg.width}")
        if np.shape(sg.data) != (nch, sg.num_cells):
            raise ValidationError(f"subgrid {n}: channel data shape {np.shape(sg.data)} != {(nch, sg.num_cells)}")

    # occupancy map at the resolution of the finest level present
    unit = 2 ** min(sg.level for sg in ds.subgrids)
    wb = ds.world_bounds
    foot = ds._footprint()
    if np.any(foot[0] < wb[0]) or np.any(foot[1] > wb[1]):
        raise ValidationError(f"subgrids extend beyond world bounds {wb.tolist()}")
    origin = np.floor(wb[0] / unit).astype(np.int64)
    shape = np.ceil(wb[1] / unit).astype(np.int64) - origin
    occ = np.zeros(shape[::-1], dtype=np.int32)  # z, y, x
    for n, sg in enumerate(ds.subgrids):
        lo = np.asarray(sg.lower) // unit - origin
        hi = np.asarray(sg.upper) // unit - origin
        view = occ[lo[2] : hi[2], lo[1] : hi[1], lo[0] : hi[0]]
        taken = view[view != 0]
        if taken.size:
            raise OverlapError(int(taken.min()) - 1, n)
        view[...] = n + 1
    empty = np.argwhere(occ == 0)
    if empty.size:
        kz, jy, ix = empty[0]
        raise CoverageGap((origin + np.array([ix, jy, kz]) + 0.5) * unit)
    # declared bounds that are not multiples of the occupancy unit
    if np.any(wb[0] != origin * unit) or np.any(wb[1] != (origin + shape) * unit):
        raise CoverageGap(wb[0])


def _descriptor_path(path) -> Path:
    path = Path(path)
    if path.is_dir() or path.suffix.lower() != ".json":
        return path / DESCRIPTOR_NAME
    return path


def load_dataset(path) -> AMRDataset:
    """Load a descriptor (or a directory holding ``dataset.json``) and validate it."""
    desc_path = _descriptor_path(path)
    try:
        desc = json.loads(desc_path.read_text())
    except FileNotFoundError:
        raise MalformedDescriptor(f"descriptor not found: {desc_path}") from None
    except json.JSONDecodeError as err:
        raise MalformedDescriptor(f"{desc_path}: {err}") from None
    try:
        channels = [str(c) for c in desc["channels"]]
        entries = desc["subgrids"]
        data_name = desc["data"]
        specs = [(int(e["level"]), tuple(int(v) for v in e["lower"]), tuple(int(v) for v in e["dims"])) for e in entries]
    except (KeyError, TypeError, ValueError) as err:
        raise MalformedDescriptor(f"{desc_path}: bad field {err}") from None
    if any(len(lo) != 3 or len(d) != 3 for _, lo, d in specs):
        raise MalformedDescriptor(f"{desc_path}: lower/dims must have 3 entries")
    raw_path = desc_path.parent / data_name
    if not raw_path.is_file():
        raise MissingRawFile(str(raw_path))
    raw = np.fromfile(raw_path, dtype="<f4")
    nch = len(channels)
    expected = sum(nch * d[0] * d[1] * d[2] for _, _, d in specs)
    if raw.size != expected or raw_path.stat().st_size != 4 * expected:
        raise MalformedDescriptor(f"{raw_path}: {raw_path.stat().st_size} bytes, expected {4 * expected}")
    subgrids = []
    pos = 0
    for level, lower, dims in specs:
        n = nch * dims[0] * dims[1] * dims[2]
        block = raw[pos : pos + n].astype(np.float64).reshape(nch, -1)
        subgrids.append(Subgrid(level, lower, dims, block))
        pos += n
    ds = AMRDataset(channels, subgrids)
    try:
        validate_dataset(ds)
    except ValidationError as err:
        raise ValidationFailure(err) from err
    return ds


def write_dataset(ds: AMRDataset, path) -> tuple[Path, Path]:
    """Write descriptor and float32 payload; returns both paths.

    ``path`` is a directory (files ``dataset.json`` and ``payload.bin`` inside
    it) or a ``.json`` descriptor path (payload written next to it as
    ``<stem>.bin``).
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        desc_path = path
        raw_path = path.with_suffix(".bin")
    else:
        desc_path = path / DESCRIPTOR_NAME
        raw_path = path / PAYLOAD_NAME
    desc = {
        "channels": list(ds.channels),
        "subgrids": [{"level": sg.level, "lower": list(sg.lower), "dims": list(sg.dims)} for sg in ds.subgrids],
        "data": raw_path.name,
    }
    payload = np.concatenate(
        [ds.values[:, ds.offsets[i] : ds.offsets[i + 1]].ravel() for i in range(len(ds.subgrids))]
    ) if ds.subgrids else np.zeros(0)
    try:
        desc_path.parent.mkdir(parents=True, exist_ok=True)
        payload.astype("<f4").tofile(raw_path)
        desc_path.write_text(json.dumps(desc, indent=1) + "\n")
    except OSError as err:
        raise IOError(f"cannot write dataset to {path}: {err}") from err
    return desc_path, raw_path
