import numpy as np
import pytest

from amrflow.export import StreamlineSet, export_csv, export_tubes_obj, export_vtk, read_csv, tube_mesh
from amrflow.tracer import TracerConfig, UniformInBox, make_seeds, trace_to_end

VEL = ["velx", "vely", "velz"]


def _lines():
    return StreamlineSet([np.array([[0, 0, 0], [1, 0, 0], [2, 1, 0.5]], float), np.array([[5, 5, 5], [5, 6, 5]], float)])


def test_csv_rows(tmp_path):
    s = StreamlineSet([np.array([[0, 0, 0], [0.1, 0, 0], [0.2, 0, 0]])])
    export_csv(s, tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "seed,step,x,y,z" and len(lines) == 4
    assert lines[2] == "0,1,0.1,0,0"


def test_csv_empty(tmp_path):
    export_csv(StreamlineSet([]), tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "seed,step,x,y,z\n"


def test_csv_scalar_column(tmp_path):
    s = StreamlineSet([np.zeros((2, 3))], scalars=[np.array([1.5, 2.5])])
    export_csv(s, tmp_path / "s.csv")
    text = (tmp_path / "s.csv").read_text().splitlines()
    assert text[0].endswith(",scalar") and text[2] == "0,1,0,0,0,2.5"


def test_csv_round_trip_and_replay(tmp_path, scene):
    sc = scene("abc-multilevel")
    seeds = make_seeds(sc.dataset, UniformInBox(((0, 0, 0), (32, 32, 32)), 20, 0))
    buf = trace_to_end(seeds, sc.engine("bvh"), sc.field, VEL, TracerConfig(max_steps=50))
    s = StreamlineSet.from_buffer(buf)
    export_csv(s, tmp_path / "a.csv")
    export_csv(StreamlineSet.from_buffer(buf.copy()), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = read_csv(tmp_path / "a.csv")
    assert sum(len(v) for v in back.values()) == int((buf.steps_taken + 1).sum())
    for k, line in enumerate(s.lines):
        assert np.max(np.abs(back[k] - line)) <= 1e-6 * max(1.0, np.abs(line).max())


def test_vtk_records(tmp_path):
    export_vtk(StreamlineSet([np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float)]), tmp_path / "one.vtk")
    text = (tmp_path / "one.vtk").read_text().splitlines()
    assert text[0] == "# vtk DataFile Version 3.0" and "DATASET POLYDATA" in text
    assert "POINTS 3 float" in text and "3 0 1 2" in text
    export_vtk(_lines(), tmp_path / "two.vtk")
    assert "LINES 2 7" in (tmp_path / "two.vtk").read_text().splitlines()


def read_vtk_strict(path):
    """Parse with VTK's own legacy reader; any warning or error fails the read."""
    from vtkmodules.vtkCommonCore import vtkCommand
    from vtkmodules.vtkIOLegacy import vtkPolyDataReader

    messages = []
    reader = vtkPolyDataReader()
    reader.AddObserver(vtkCommand.WarningEvent, lambda *a: messages.append("warning"))
    reader.AddObserver(vtkCommand.ErrorEvent, lambda *a: messages.append("error"))
    reader.SetFileName(str(path))
    reader.Update()
    assert not messages
    return reader.GetOutput()


def test_vtk_parses_in_reference_reader(tmp_path):
    from vtkmodules.util.numpy_support import vtk_to_numpy

    s = _lines()
    s = StreamlineSet(s.lines, scalars=[np.arange(3.0), np.arange(2.0)])
    export_vtk(s, tmp_path / "s.vtk")
    poly = read_vtk_strict(tmp_path / "s.vtk")
    assert np.allclose(vtk_to_numpy(poly.GetPoints().GetData()), np.vstack(s.lines))
    assert poly.GetNumberOfLines() == 2
    assert np.allclose(vtk_to_numpy(poly.GetPointData().GetScalars()), [0, 1, 2, 0, 1])


def test_tube_single_segment():
    v, f = tube_mesh(np.array([[0, 0, 0], [0, 0, 1.0]]), 0.1, 8)
    assert v.shape == (16, 3) and f.shape == (16, 3)


def test_tube_colinear_three_points():
    v, f = tube_mesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]]), 0.1, 8)
    assert len(v) == 24 and len(f) == 32


def test_tube_skips_zero_length():
    v, f = tube_mesh(np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0.0]]), 0.1, 6)
    assert len(v) == 12 and len(f) == 12


def test_tube_rejects_bad_params():
    with pytest.raises(ValueError):
        tube_mesh(np.zeros((2, 3)), 0.1, 2)
    with pytest.raises(ValueError):
        tube_mesh(np.zeros((2, 3)), 0.0, 8)


def test_tube_ring_radius_and_no_twist():
    t = np.linspace(0, 3, 40)
    line = np.column_stack([np.cos(t), np.sin(t), 0.3 * t])
    v, f = tube_mesh(line, 0.05, 10)
    rings = v.reshape(len(line), 10, 3)
    assert np.allclose(np.linalg.norm(rings - line[:, None], axis=2), 0.05)
    # consecutive ring frames stay aligned: first-vertex offsets change only slightly
    u = rings[:, 0] - line
    cos = np.sum(u[1:] * u[:-1], axis=1) / 0.05**2
    assert cos.min() > 0.9


def audit_obj(path):
    verts, faces = [], []
    for line in path.read_text().splitlines():
        if line.startswith("v "):
            verts.append([float(x) for x in line.split()[1:]])
        elif line.startswith("f "):
            faces.append([int(x) for x in line.split()[1:]])
    verts, faces = np.array(verts), np.array(faces)
    assert np.all(np.isfinite(verts))
    assert faces.min() >= 1 and faces.max() <= len(verts)
    a, b, c = (verts[faces[:, k] - 1] for k in range(3))
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    assert np.all(np.isfinite(area)) and np.all(area > 0)
    return verts, faces


def test_obj_audit(tmp_path, scene):
    sc = scene("three-level-core-rotation")
    seeds = np.array([[1.0, 0, 0], [2.0, 0.5, 0.2], [0, 2.5, -1]])
    buf = trace_to_end(seeds, sc.engine("bvh"), sc.field, VEL, TracerConfig(step=0.1, max_steps=30))
    export_tubes_obj(StreamlineSet.from_buffer(buf), 0.05, 8, tmp_path / "t.obj")
    verts, faces = audit_obj(tmp_path / "t.obj")
    assert len(verts) == 8 * 31 * 3 and len(faces) == 16 * 30 * 3


def test_scalar_length_checked():
    with pytest.raises(ValueError):
        StreamlineSet([np.zeros((3, 3))], scalars=[np.zeros(2)])


def test_nan_rejected():
    with pytest.raises(ValueError):
        StreamlineSet([np.array([[0, 0, np.nan]])])


def test_unwritable(tmp_path):
    with pytest.raises(IOError):
        export_csv(_lines(), tmp_path / "missing" / "a.csv")
