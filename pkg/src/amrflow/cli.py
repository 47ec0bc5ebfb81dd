"""``amrflow`` command line: gen | validate | query | trace | bench.

Exit codes: 0 ok, 1 error (including usage errors), 2 point outside the
domain (``query`` only).
"""

from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from . import amr_model, synth
from .query import ENGINES
from .reconstruct import OK, sample_many
from .scene import Scene
from .tracer import (
    DensityThreshold,
    EmptySelection,
    ExplicitList,
    TracerConfig,
    UniformInBox,
    make_seeds,
    read_seeds_file,
    trace_to_end,
)

EXIT_OK, EXIT_ERROR, EXIT_OUTSIDE = 0, 1, 2
VELOCITY = ["velx", "vely", "velz"]


class EquivalenceFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _add_source(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--dataset", help="descriptor file or directory holding dataset.json")
    g.add_argument("--preset", choices=synth.PRESETS, help="generate a named preset in memory")


def _load(args):
    if args.dataset:
        return amr_model.load_dataset(args.dataset)
    return synth.preset(args.preset)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="amrflow", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--preset", choices=synth.PRESETS)
    g.add_argument("--field", choices=["constant", "rotation", "abc"], help="analytic field (without --preset)")
    g.add_argument("--bounds", type=int, nargs=6, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"))
    g.add_argument("--level", type=int, default=0, help="uniform refinement level")
    g.add_argument("--refine-box", type=float, nargs=6, help="refine inside this box to --level, --coarse-level outside")
    g.add_argument("--coarse-level", type=int, default=1)
    g.add_argument("--block-size", type=_positive_int)
    g.add_argument("-o", "--out", required=True, help="output directory or .json descriptor path")

    v = sub.add_parser("validate", help="check a dataset's structural invariants")
    v.add_argument("dataset")

    q = sub.add_parser("query", help="point containment query and reconstruction")
    _add_source(q)
    pts = q.add_mutually_exclusive_group(required=True)
    pts.add_argument("--point", type=float, nargs=3, metavar=("X", "Y", "Z"))
    pts.add_argument("--points-file", help="one 'x y z' per line")
    q.add_argument("--engine", choices=[*ENGINES, "all"], default="bvh")
    q.add_argument("--channel", action="append", help="channel to reconstruct (repeatable; default all)")

    t = sub.add_parser("trace", help="advect particles and export streamlines")
    _add_source(t)
    _add_tracer_flags(t)
    seeds = t.add_mutually_exclusive_group(required=True)
    seeds.add_argument("--seeds-file")
    seeds.add_argument("--seed-box", type=float, nargs=6, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"))
    seeds.add_argument("--seed-density", metavar="CHANNEL")
    t.add_argument("--seed-count", type=_positive_int, default=100)
    t.add_argument("--rng-seed", type=int, default=0)
    t.add_argument("--quantile", type=float, default=0.99)
    t.add_argument("--scalar", help="per-vertex scalar to export: a channel name or 'speed'")
    t.add_argument("--csv")
    t.add_argument("--vtk")
    t.add_argument("--obj")
    t.add_argument("--tube-radius", type=_positive_float, default=0.1)
    t.add_argument("--tube-sides", type=int, default=8)

    b = sub.add_parser("bench", help="time particle advection per engine")
    _add_source(b)
    _add_tracer_flags(b, steps_default=1000)
    b.add_argument("--counts", type=_positive_int, nargs="+", default=[2**k for k in range(10, 16)])
    b.add_argument("--engines", nargs="+", choices=ENGINES, default=list(ENGINES))
    b.add_argument("--rng-seed", type=int, default=0)
    b.add_argument("--csv", help="write BenchRecord rows here (default stdout)")
    return ap


def _add_tracer_flags(p, steps_default=1000):
    p.add_argument("--engine", choices=ENGINES, default="bvh")
    p.add_argument("--integrator", choices=["rk4", "euler"], default="rk4")
    p.add_argument("--step", type=_positive_float, default=0.5, help="step length in units of the finest local cell width")
    p.add_argument("--max-steps", type=_positive_int, default=steps_default)
    p.add_argument("--batch", type=_positive_int, default=100)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--channels", nargs=3, default=VELOCITY)
    p.add_argument("--threads", type=_positive_int, default=1)


def _config(args) -> TracerConfig:
    return TracerConfig(
        integrator=args.integrator,
        step=args.step,
        max_steps=args.max_steps,
        normalize_velocity=args.normalize,
        batch_size=args.batch,
    )


# --- subcommands --------------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.preset:
        ds = synth.preset(args.preset, args.block_size)
    else:
        if not (args.field and args.bounds):
            raise ValueError("gen needs --preset or both --field and --bounds")
        field = {"constant": synth.Constant(), "rotation": synth.RigidRotation(), "abc": synth.ABCFlow()}[args.field]
        if args.refine_box:
            rule = synth.RefineInsideBox(tuple(map(tuple, np.reshape(args.refine_box, (2, 3)))), args.level, args.coarse_level)
        else:
            rule = synth.UniformLevel(args.level)
        ds = synth.generate(np.reshape(args.bounds, (2, 3)), field, rule, args.block_size or 4)
    amr_model.validate_dataset(ds)
    desc, raw = amr_model.write_dataset(ds, args.out)
    print(f"wrote {desc} and {raw}: {len(ds.subgrids)} subgrids, {ds.num_cells} cells")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        amr_model.load_dataset(args.dataset)
    except amr_model.ValidationFailure as err:
        print(f"INVALID: {err}")
        return EXIT_ERROR
    print("OK")
    return EXIT_OK


def cmd_query(args) -> int:
    scene = Scene(_load(args))
    points = np.array([args.point]) if args.point else read_seeds_file(args.points_file)
    channels = args.channel or scene.dataset.channels
    kinds = list(ENGINES) if args.engine == "all" else [args.engine]
    boxes = [scene.engine(k).locate_many(points) for k in kinds]
    for k, other in zip(kinds[1:], boxes[1:]):
        if not np.array_equal(boxes[0], other):
            bad = int(np.flatnonzero(boxes[0] != other)[0])
            print(f"MISMATCH at {points[bad].tolist()}: {kinds[0]}={boxes[0][bad]} {k}={other[bad]}")
            return EXIT_ERROR
    engine = scene.engine(kinds[0])
    values, status = sample_many(engine, scene.field, channels, points)
    any_outside = False
    for p, box, vals, st in zip(points, boxes[0], values, status):
        coords = " ".join(f"{c:g}" for c in p)
        if box < 0:
            any_outside = True
            print(f"point {coords}: outside")
            continue
        hit = engine.hit(int(box))
        ids = " ".join(str(i) for i in hit.brick_ids)
        recon = " ".join(f"{c}={v:.9g}" for c, v in zip(channels, vals)) if st == OK else "degenerate weight"
        print(f"point {coords}: box {hit.box_index} bricks [{ids}] finest_width {hit.finest_cell_width:g} {recon}")
    if len(kinds) > 1:
        print(f"engines {','.join(kinds)} agree on {len(points)} points")
    return EXIT_OUTSIDE if any_outside else EXIT_OK


def _seeds(args, ds):
    if args.seeds_file:
        spec = ExplicitList(read_seeds_file(args.seeds_file))
    elif args.seed_box:
        spec = UniformInBox(tuple(args.seed_box), args.seed_count, args.rng_seed)
    else:
        spec = DensityThreshold(args.seed_density, args.quantile, args.seed_count, args.rng_seed)
    return make_seeds(ds, spec)


def cmd_trace(args) -> int:
    from .export import StreamlineSet, export_csv, export_tubes_obj, export_vtk

    if args.tube_sides < 3:
        raise ValueError("--tube-sides must be >= 3")
    cfg = _config(args)
    scene = Scene(_load(args))
    seeds = _seeds(args, scene.dataset)
    engine = scene.engine(args.engine)
    buf = trace_to_end(seeds, engine, scene.field, args.channels, cfg, threads=args.threads)
    scalars = None
    if args.scalar:
        pts = np.concatenate([buf.trajectory(s) for s in range(buf.num_seeds)])
        chans = args.channels if args.scalar == "speed" else [args.scalar]
        vals, _ = sample_many(engine, scene.field, chans, pts)
        vals = np.linalg.norm(vals, axis=1) if args.scalar == "speed" else vals[:, 0]
        # positions recorded just before leaving the domain have no sample
        vals = np.nan_to_num(vals, nan=0.0)
        splits = np.cumsum([buf.steps_taken[s] + 1 for s in range(buf.num_seeds)])[:-1]
        scalars = np.split(vals, splits)
    lines = StreamlineSet.from_buffer(buf, scalars)
    if args.csv:
        export_csv(lines, args.csv)
    if args.vtk:
        export_vtk(lines, args.vtk)
    if args.obj:
        export_tubes_obj(lines, args.tube_radius, args.tube_sides, args.obj)
    counts = " ".join(f"{k}={v}" for k, v in buf.status_counts().items())
    print(f"traced {buf.num_seeds} particles, {int(buf.steps_taken.sum())} steps: {counts}")
    return EXIT_OK


def run_bench(scene: Scene, counts, steps: int, engines, cfg: TracerConfig, channels=VELOCITY, threads=1, rng_seed=0, log=None):
    """Time advection per (engine, count); cross-checks trajectories before any timing.

    Returns a list of record dicts with keys ``engine, particles, steps,
    seconds, qps, nodes``.
    """
    cfg = TracerConfig(cfg.integrator, cfg.step, steps, cfg.stagnant_speed_eps, cfg.normalize_velocity, steps)
    wb = scene.dataset.world_bounds
    records = []
    check_kinds = sorted(set(engines) | {"brute"}, key=ENGINES.index)
    for count in counts:
        seeds = make_seeds(scene.dataset, UniformInBox((tuple(wb[0]), tuple(wb[1])), count, rng_seed))
        sub = seeds[::100]  # 1% subsample
        ref = None
        for kind in check_kinds:
            buf = trace_to_end(sub, scene.engine(kind), scene.field, channels, cfg, threads)
            if ref is None:
                ref = buf
            elif not (np.array_equal(ref.steps_taken, buf.steps_taken) and np.array_equal(ref.positions, buf.positions, equal_nan=True)):
                raise EquivalenceFailure(f"{kind} trajectories differ from {check_kinds[0]} ({count} particles)")
        for kind in engines:
            engine = scene.engine(kind)
            t0 = time.perf_counter()
            buf = trace_to_end(seeds, engine, scene.field, channels, cfg, threads)
            dt = time.perf_counter() - t0
            samples = int(buf.counters[:, 3].sum())
            rec = dict(engine=kind, particles=count, steps=steps, seconds=dt, qps=samples / dt if dt > 0 else float("inf"), nodes=int(buf.counters[:, 0].sum()))
            records.append(rec)
            if log:
                log(rec)
    return records


def cmd_bench(args) -> int:
    scene = Scene(_load(args))
    cfg = _config(args)
    # compile kernels outside the timed region
    wb = scene.dataset.world_bounds
    warm = make_seeds(scene.dataset, UniformInBox((tuple(wb[0]), tuple(wb[1])), 2, 0))
    trace_to_end(warm, scene.engine("brute"), scene.field, args.channels, TracerConfig(args.integrator, args.step, 2))
    fields = ["engine", "particles", "steps", "seconds", "qps", "nodes"]
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
        writer.writeheader()

        def log(rec):
            writer.writerow({**rec, "seconds": f"{rec['seconds']:.6f}", "qps": f"{rec['qps']:.1f}"})
            out.flush()

        run_bench(scene, args.counts, args.max_steps, args.engines, cfg, args.channels, args.threads, args.rng_seed, log)
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"regions: {len(scene.regions)} boxes", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "validate": cmd_validate, "query": cmd_query, "trace": cmd_trace, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.cmd](args)
    except (amr_model.DatasetError, synth.InvalidTiling, EmptySelection, EquivalenceFailure, ValueError, KeyError, OSError) as err:
        print(f"amrflow {args.cmd}: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
