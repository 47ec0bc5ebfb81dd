"""Streamline writers: CSV, legacy ASCII VTK polylines, OBJ tube meshes."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tracer import TraceBuffer


@dataclass
class StreamlineSet:
    lines: list  # one (n_i, 3) array per seed
    scalars: list | None = None
    status: np.ndarray | None = None

    def __post_init__(self):
        if self.scalars is not None:
            for line, sc in zip(self.lines, self.scalars):
                if len(sc) != len(line):
                    raise ValueError("scalar array length must match its polyline")
        for line in self.lines:
            if not np.all(np.isfinite(line)):
                raise ValueError("polylines must be finite")

    @classmethod
    def from_buffer(cls, buf: TraceBuffer, scalars=None) -> "StreamlineSet":
        lines = [buf.trajectory(s).copy() for s in range(buf.num_seeds)]
        return cls(lines, scalars, buf.status.copy())

    @property
    def num_vertices(self) -> int:
        return sum(len(line) for line in self.lines)


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def _write(path, text: str):
    try:
        Path(path).write_text(text)
    except OSError as err:
        raise IOError(f"cannot write {path}: {err}") from err


def export_csv(s: StreamlineSet, path):
    """``seed,step,x,y,z[,scalar]``, one row per vertex, 9 significant digits."""
    head = "seed,step,x,y,z" + (",scalar" if s.scalars is not None else "")
    rows = [head]
    for k, line in enumerate(s.lines):
        for i, p in enumerate(line):
            row = f"{k},{i},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])}"
            if s.scalars is not None:
                row += "," + _fmt(s.scalars[k][i])
            rows.append(row)
    _write(path, "\n".join(rows) + "\n")


def read_csv(path) -> dict[int, np.ndarray]:
    """Positions per seed from a file written by :func:`export_csv`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out: dict[int, np.ndarray] = {}
    if data.size == 0:
        return out
    for seed in np.unique(data[:, 0]).astype(int):
        rows = data[data[:, 0] == seed]
        out[int(seed)] = rows[np.argsort(rows[:, 1]), 2:5]
    return out


def export_vtk(s: StreamlineSet, path):
    n = s.num_vertices
    out = ["# vtk DataFile Version 3.0", "amrflow streamlines", "ASCII", "DATASET POLYDATA", f"POINTS {n} float"]
    for line in s.lines:
        out.extend(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}" for p in line)
    size = sum(len(line) + 1 for line in s.lines)
    out.append(f"LINES {len(s.lines)} {size}")
    start = 0
    for line in s.lines:
        out.append(" ".join(str(v) for v in [len(line), *range(start, start + len(line))]))
        start += len(line)
    if s.scalars is not None:
        out += [f"POINT_DATA {n}", "SCALARS value float 1", "LOOKUP_TABLE default"]
        out.extend(_fmt(v) for sc in s.scalars for v in sc)
    _write(path, "\n".join(out) + "\n")


def _perpendicular(t):
    a = np.zeros(3)
    a[np.argmin(np.abs(t))] = 1.0
    u = np.cross(t, a)
    return u / np.linalg.norm(u)


def tube_mesh(line, radius: float, sides: int):
    """Rings of ``sides`` vertices around each distinct polyline point.

    Ring frames are parallel-transported along the curve so consecutive rings
    do not twist. Returns ``(vertices, triangles)`` with 0-based indices.
    """
    if sides < 3 or not radius > 0:
        raise ValueError("need sides >= 3 and radius > 0")
    pts = np.asarray(line, dtype=np.float64)
    if len(pts):
        keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 0])
        pts = pts[keep]
    if len(pts) < 2:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    seg = np.diff(pts, axis=0)
    seg /= np.linalg.norm(seg, axis=1)[:, None]
    # vertex tangents: average of adjacent segment directions
    tang = np.vstack([seg[:1], seg[:-1] + seg[1:], seg[-1:]])
    norms = np.linalg.norm(tang, axis=1)
    bad = norms < 1e-12
    tang[bad] = np.vstack([seg, seg[-1:]])[bad]
    tang /= np.linalg.norm(tang, axis=1)[:, None]

    u = _perpendicular(tang[0])
    angles = 2.0 * np.pi * np.arange(sides) / sides
    verts = []
    for i, t in enumerate(tang):
        if i:
            # discrete parallel transport: carry the previous normal into the new ring plane
            u = u - np.dot(u, t) * t
            n = np.linalg.norm(u)
            u = u / n if n > 1e-12 else _perpendicular(t)
        v = np.cross(t, u)
        ring = pts[i] + radius * (np.cos(angles)[:, None] * u + np.sin(angles)[:, None] * v)
        verts.append(ring)
    tris = []
    for i in range(len(pts) - 1):
        a, b = i * sides, (i + 1) * sides
        for k in range(sides):
            k1 = (k + 1) % sides
            tris.append((a + k, a + k1, b + k1))
            tris.append((a + k, b + k1, b + k))
    return np.vstack(verts), np.array(tris, dtype=np.int64)


def export_tubes_obj(s: StreamlineSet, radius: float, sides: int, path):
    out = ["# amrflow streamline tubes"]
    faces = []
    base = 0
    for line in s.lines:
        v, f = tube_mesh(line, radius, sides)
        out.extend(f"v {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}" for p in v)
        faces.extend(f"f {a + base + 1} {b + base + 1} {c + base + 1}" for a, b, c in f)
        base += len(v)
    _write(path, "\n".join(out + faces) + "\n")
