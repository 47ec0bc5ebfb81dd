"""Particle tracing through cell-centric AMR vector fields using point containment queries."""

from .amr_model import AMRDataset, Subgrid, cell_at, load_dataset, validate_dataset, write_dataset
from .bricks import Brick, brick_domain, build_bricks
from .query import PointQuery, QueryEngine, RegionHit, build_bvh, build_kdtree, query_stats
from .reconstruct import hat_weight, sample_direction, sample_scalar
from .regions import RegionBox, RegionDecomposition, build_regions, locate_box_linear
from .scene import Scene
from .synth import generate, preset
from .tracer import TraceBuffer, TracerConfig, advance, make_seeds, trace_to_end

__version__ = "0.1.0"
