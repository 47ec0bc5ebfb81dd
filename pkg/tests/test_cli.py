import json
import subprocess
import sys

import numpy as np
import pytest

from amrflow import synth
from amrflow.amr_model import write_dataset
from amrflow.cli import main
from amrflow.export import read_csv


def run(capsys, *argv):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as exc:  # argparse usage errors
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


def test_gen_then_validate(tmp_path, capsys):
    code, out, _ = run(capsys, "gen", "--preset", "three-level-core-rotation", "-o", tmp_path / "d")
    assert code == 0 and (tmp_path / "d" / "dataset.json").exists()
    code, out, _ = run(capsys, "validate", tmp_path / "d")
    assert code == 0 and out.strip() == "OK"


def test_gen_bad_block_size(tmp_path, capsys):
    code, _, err = run(capsys, "gen", "--preset", "uniform", "--block-size", "3", "-o", tmp_path / "x")
    assert code != 0 and "InvalidTiling" in err


def test_gen_replay_byte_identical(tmp_path, capsys):
    for d in ("a", "b"):
        run(capsys, "gen", "--preset", "abc-multilevel", "-o", tmp_path / d)
    for name in ("dataset.json", "payload.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gen_from_flags(tmp_path, capsys):
    code, _, _ = run(capsys, "gen", "--field", "rotation", "--bounds", -8, -8, -8, 8, 8, 8,
                     "--refine-box", -4, -4, -4, 4, 4, 4, "--level", 0, "--coarse-level", 1, "-o", tmp_path / "r")
    assert code == 0
    assert run(capsys, "validate", tmp_path / "r")[0] == 0


def test_validate_overlap(tmp_path, capsys):
    write_dataset(synth.preset("uniform"), tmp_path / "d")
    desc = json.loads((tmp_path / "d" / "dataset.json").read_text())
    desc["subgrids"][1]["lower"] = [2, 0, 0]
    (tmp_path / "d" / "dataset.json").write_text(json.dumps(desc))
    code, out, _ = run(capsys, "validate", tmp_path / "d")
    assert code == 1 and "subgrids 0 and 1 overlap" in out


def test_validate_gap(tmp_path, capsys):
    ds = synth.preset("uniform")
    write_dataset(type(ds)(ds.channels, ds.subgrids[1:]), tmp_path / "d")
    code, out, _ = run(capsys, "validate", tmp_path / "d")
    assert code == 1 and "(0.5, 0.5, 0.5)" in out


def test_query_center(capsys):
    code, out, _ = run(capsys, "query", "--preset", "uniform", "--point", 4, 4, 4)
    assert code == 0 and "bricks [0]" in out and "velx=1 " in out


def test_query_outside(capsys):
    code, out, _ = run(capsys, "query", "--preset", "uniform", "--point", 400, 4, 4)
    assert code == 2 and "outside" in out


def test_query_all_engines_sweep(tmp_path, capsys):
    pts = np.random.default_rng(0).uniform(-34, 34, (1000, 3))
    np.savetxt(tmp_path / "p.txt", pts)
    code, out, _ = run(capsys, "query", "--preset", "three-level-core-rotation", "--points-file", tmp_path / "p.txt", "--engine", "all")
    assert code in (0, 2) and "agree on 1000 points" in out


def _circle_seeds(path, n=16):
    th = np.linspace(0, 2 * np.pi, n, endpoint=False)
    r = np.linspace(0.5, 3.0, n)
    np.savetxt(path, np.column_stack([r * np.cos(th), r * np.sin(th), np.zeros(n)]))
    return r


def _drift(csv):
    lines = read_csv(csv)
    return max(abs(np.hypot(*l[-1, :2]) - np.hypot(*l[0, :2])) / np.hypot(*l[0, :2]) for l in lines.values())


def test_trace_circle_rk4_vs_euler(tmp_path, capsys):
    _circle_seeds(tmp_path / "s.txt")
    common = ["trace", "--preset", "three-level-core-rotation", "--seeds-file", tmp_path / "s.txt", "--step", 0.01, "--max-steps", 628]
    code, out, _ = run(capsys, *common, "--csv", tmp_path / "rk.csv")
    assert code == 0 and "finished=16" in out
    code, _, _ = run(capsys, *common, "--integrator", "euler", "--csv", tmp_path / "eu.csv")
    rk, eu = _drift(tmp_path / "rk.csv"), _drift(tmp_path / "eu.csv")
    assert rk <= 1e-5 and eu > rk


def test_trace_max_steps_zero(capsys):
    code, _, err = run(capsys, "trace", "--preset", "uniform", "--seed-box", 0, 0, 0, 1, 1, 1, "--max-steps", 0)
    assert code == 1 and "--max-steps" in err


def test_trace_outputs(tmp_path, capsys):
    code, out, _ = run(capsys, "trace", "--preset", "abc-multilevel", "--seed-density", "rho", "--quantile", 0.9, "--seed-count", 8,
                       "--max-steps", 40, "--scalar", "speed", "--csv", tmp_path / "a.csv", "--vtk", tmp_path / "a.vtk",
                       "--obj", tmp_path / "a.obj", "--tube-radius", 0.05, "--tube-sides", 6, "--threads", 2)
    assert code == 0 and out.startswith("traced 8 particles")
    assert (tmp_path / "a.csv").read_text().startswith("seed,step,x,y,z,scalar")
    assert "SCALARS value float 1" in (tmp_path / "a.vtk").read_text()
    assert (tmp_path / "a.obj").read_text().count("\nf ") > 0


def test_trace_empty_seed_box(capsys):
    code, _, err = run(capsys, "trace", "--preset", "uniform", "--seed-box", 50, 50, 50, 60, 60, 60)
    assert code == 1 and "EmptySelection" in err


def test_bench_csv(tmp_path, capsys):
    code, _, _ = run(capsys, "bench", "--preset", "uniform", "--counts", 4, 8, "--max-steps", 5, "--csv", tmp_path / "b.csv")
    rows = (tmp_path / "b.csv").read_text().splitlines()
    assert code == 0 and rows[0] == "engine,particles,steps,seconds,qps,nodes"
    assert len(rows) == 1 + 2 * 3
    assert {r.split(",")[0] for r in rows[1:]} == {"bvh", "kdtree", "brute"}


def test_bench_equivalence_failure_aborts(monkeypatch, scene):
    from amrflow import cli
    from amrflow.tracer import TracerConfig

    real = cli.trace_to_end

    def tampered(seeds, engine, *a, **k):
        buf = real(seeds, engine, *a, **k)
        if engine.kind == "kdtree":
            buf.positions[0, 1, 0] += 1e-9
        return buf

    monkeypatch.setattr(cli, "trace_to_end", tampered)
    log = []
    with pytest.raises(cli.EquivalenceFailure):
        cli.run_bench(scene("uniform"), [10], 3, ["bvh", "kdtree"], TracerConfig(), log=log.append)
    assert log == []


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "amrflow", "query", "--preset", "uniform", "--point", "1", "1", "1"], capture_output=True, text=True)
    assert r.returncode == 0 and "box 0" in r.stdout


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as info:
        main(["query", "--preset", "uniform"])
    assert info.value.code == 1
