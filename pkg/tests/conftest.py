import functools

import numpy as np
import pytest

from amrflow import synth
from amrflow.amr_model import AMRDataset, Subgrid
from amrflow.scene import Scene


@functools.lru_cache(maxsize=None)
def preset_scene(name):
    return Scene(synth.preset(name))


@pytest.fixture
def scene():
    return preset_scene


def box_dataset(boxes, channels=("rho",), fill=None):
    """Dataset from ``[(level, lower, dims), ...]`` with ``fill(centers) -> (nch, n)`` values."""
    subgrids = []
    for level, lower, dims in boxes:
        w = 2**level
        z, y, x = np.meshgrid(*[lower[a] + (np.arange(dims[a]) + 0.5) * w for a in (2, 1, 0)], indexing="ij")
        centers = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
        data = np.zeros((len(channels), len(centers))) if fill is None else np.asarray(fill(centers), dtype=np.float64)
        subgrids.append(Subgrid(level, tuple(lower), tuple(dims), data.reshape(len(channels), -1)))
    return AMRDataset(channels, subgrids)


def domain_sets(domains, points):
    """Brick ids whose closed domain contains each point, by direct scan."""
    inside = np.all((points[:, None, :] >= domains[None, :, 0]) & (points[:, None, :] <= domains[None, :, 1]), axis=2)
    return [tuple(np.flatnonzero(row)) for row in inside]


def random_points(bounds, n, seed=0, pad=0.0):
    bounds = np.asarray(bounds, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return bounds[0] - pad + rng.random((n, 3)) * (bounds[1] - bounds[0] + 2 * pad)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=str):
        terminalreporter.write_line(results[key])
