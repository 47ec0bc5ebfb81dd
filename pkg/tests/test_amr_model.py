import json

import numpy as np
import pytest

from amrflow import synth
from amrflow.amr_model import (
    AlignmentError,
    AMRDataset,
    CoverageGap,
    MalformedDescriptor,
    MissingRawFile,
    OverlapError,
    Subgrid,
    ValidationFailure,
    cell_at,
    load_dataset,
    validate_dataset,
    write_dataset,
)
from conftest import box_dataset


def _write_raw(tmp_path, subgrids, n_floats, channels=("rho",)):
    desc = {"channels": list(channels), "subgrids": subgrids, "data": "payload.bin"}
    (tmp_path / "dataset.json").write_text(json.dumps(desc))
    np.arange(n_floats, dtype="<f4").tofile(tmp_path / "payload.bin")
    return tmp_path / "dataset.json"


def test_load_single_subgrid(tmp_path):
    path = _write_raw(tmp_path, [{"level": 0, "lower": [0, 0, 0], "dims": [4, 4, 4]}], 64)
    ds = load_dataset(path)
    assert np.array_equal(ds.world_bounds, [[0, 0, 0], [4, 4, 4]])
    assert ds.values.shape == (1, 64)
    assert ds.values[0, 5] == 5.0


def test_load_short_payload(tmp_path):
    path = _write_raw(tmp_path, [{"level": 0, "lower": [0, 0, 0], "dims": [4, 4, 4]}], 63)
    with pytest.raises(MalformedDescriptor):
        load_dataset(path)


def test_load_misaligned(tmp_path):
    path = _write_raw(tmp_path, [{"level": 1, "lower": [1, 0, 0], "dims": [2, 2, 2]}], 8)
    with pytest.raises(ValidationFailure) as info:
        load_dataset(path)
    assert isinstance(info.value.cause, AlignmentError)


def test_load_missing_payload(tmp_path):
    path = _write_raw(tmp_path, [{"level": 0, "lower": [0, 0, 0], "dims": [1, 1, 1]}], 1)
    (tmp_path / "payload.bin").unlink()
    with pytest.raises(MissingRawFile):
        load_dataset(path)


def test_load_bad_json(tmp_path):
    (tmp_path / "dataset.json").write_text("{not json")
    with pytest.raises(MalformedDescriptor):
        load_dataset(tmp_path)


def test_validate_face_sharing_pair():
    validate_dataset(box_dataset([(0, (0, 0, 0), (4, 4, 4)), (0, (4, 0, 0), (4, 4, 4))]))


def test_validate_overlap():
    ds = box_dataset([(0, (0, 0, 0), (4, 4, 4)), (1, (2, 0, 0), (2, 2, 2))])
    with pytest.raises(OverlapError) as info:
        validate_dataset(ds)
    assert {info.value.subgrid_a, info.value.subgrid_b} == {0, 1}


def test_validate_gap():
    ds = box_dataset([(0, (0, 0, 0), (4, 4, 4))])
    ds = AMRDataset(ds.channels, ds.subgrids, world_bounds=[[0, 0, 0], [8, 4, 4]])
    with pytest.raises(CoverageGap) as info:
        validate_dataset(ds)
    x, y, z = info.value.point
    assert 4 <= x <= 8 and 0 <= y <= 4 and 0 <= z <= 4


def test_validate_interior_gap_witness():
    # 2x2x2 blocks of 2^3 cells with the (2,2,0) block missing
    boxes = [(0, (x, y, z), (2, 2, 2)) for z in (0, 2) for y in (0, 2) for x in (0, 2) if (x, y, z) != (2, 2, 0)]
    with pytest.raises(CoverageGap) as info:
        validate_dataset(box_dataset(boxes))
    p = np.array(info.value.point)
    assert np.all(p >= [2, 2, 0]) and np.all(p <= [4, 4, 2])


def test_validate_duplicate_channels():
    ds = box_dataset([(0, (0, 0, 0), (1, 1, 1))], channels=("a", "a"))
    with pytest.raises(Exception):
        validate_dataset(ds)


def test_cell_at():
    ds = box_dataset([(0, (0, 0, 0), (4, 4, 4)), (1, (4, 0, 0), (2, 2, 2))], fill=lambda c: c[:, 0][None])
    c = cell_at(ds, 0, (0, 0, 0), 0)
    assert np.array_equal(c.center, [0.5, 0.5, 0.5]) and c.width == 1
    c = cell_at(ds, 1, (1, 0, 0), 0)
    assert np.array_equal(c.center, [7, 1, 1]) and c.width == 2 and c.value == 7.0
    with pytest.raises(IndexError):
        cell_at(ds, 0, (4, 0, 0), 0)


def test_cell_value_flat_index():
    ds = box_dataset([(0, (0, 0, 0), (3, 4, 5))], fill=lambda c: (c[:, 0] + 10 * c[:, 1] + 100 * c[:, 2])[None])
    for ijk in [(2, 3, 4), (1, 0, 2), (0, 3, 1)]:
        c = cell_at(ds, 0, ijk, 0)
        assert c.value == c.center[0] + 10 * c.center[1] + 100 * c.center[2]


def test_cell_centers_strictly_inside(scene):
    ds = scene("three-level-core-rotation").dataset
    centers, _, _ = ds.cell_centers()
    wb = ds.world_bounds
    assert np.all(centers > wb[0]) and np.all(centers < wb[1])


def test_round_trip_bytes(tmp_path):
    ds = synth.preset("three-level-core-rotation")
    write_dataset(ds, tmp_path / "a")
    back = load_dataset(tmp_path / "a")
    write_dataset(back, tmp_path / "b")
    for name in ("dataset.json", "payload.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert np.array_equal(back.values, ds.values)
    assert [(s.level, s.lower, s.dims) for s in back.subgrids] == [(s.level, s.lower, s.dims) for s in ds.subgrids]


def test_json_descriptor_path(tmp_path):
    ds = synth.preset("uniform")
    desc, raw = write_dataset(ds, tmp_path / "u.json")
    assert raw.name == "u.bin"
    assert np.array_equal(load_dataset(desc).values, ds.values)


def test_subgrid_data_shape_checked():
    with pytest.raises(Exception):
        validate_dataset(AMRDataset(("a",), [Subgrid(0, (0, 0, 0), (2, 2, 2), np.zeros((1, 7)))]))
