import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from blockreach.cli import (
    EXIT_BOUND,
    EXIT_SAFE,
    EXIT_UNSAFE,
    EXIT_USAGE,
    RunConfig,
    emit_flowpipe,
    main,
    parse_constraints,
    read_flowpipe_csv,
    run,
)
from blockreach.errors import ParseError
from blockreach.hybrid import ReachConfig, reach
from blockreach.models import generate_filtered_oscillator

MODELS = Path(__file__).parent.parent / "models"
LOOP = str(MODELS / "translation_loop.yaml")


def run_text(**kw):
    buf = io.StringIO()
    code = run(RunConfig(**kw), stdout=buf)
    return code, buf.getvalue()


def test_filtered_oscillator_safe():
    code, out = run_text(gen="filtered-osc:4", delta=0.01)
    assert code == EXIT_SAFE
    assert "verdict: Safe" in out


def test_forced_violation_reports_step_zero():
    code, out = run_text(gen="filtered-osc:4", delta=0.01, safety="y < -10")
    assert code == EXIT_UNSAFE
    assert "verdict: Unsafe(step=0, location=loc3)" in out


def test_bound_exhausted_exit_code():
    assert run_text(model=LOOP, jumps=0)[0] == EXIT_BOUND


def test_model_file_safe():
    code, out = run_text(model=LOOP)
    assert code == EXIT_SAFE and "fixpoints: 1" in out


def test_emit_stats():
    code, out = run_text(gen="filtered-osc:4", delta=0.01, emit_stats=True)
    line = next(x for x in out.splitlines() if x.startswith("stats: "))
    s = json.loads(line[len("stats: "):])
    assert s["sets_completed_highdim"] < s["sets_total"]
    assert s["jumps_taken"] >= 3


@pytest.mark.parametrize("argv", [
    ["--gen", "filtered-osc:4", "--template", "octagon"],
    ["--gen", "filtered-osc:4", "--plot", "x,y"],
    ["--gen", "filtered-osc:0"],
    ["--gen", "filtered-osc:4", "--safety", "q < 1"],
    ["--gen", "filtered-osc:4", "--delta", "0"],
    ["--gen", "filtered-osc:4", "--out", "x.csv", "--plot", "x,nope"],
    ["--model", "/nonexistent/model.yaml"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_argparse_errors_exit_two():
    with pytest.raises(SystemExit) as info:
        main(["--blocks", "3", "--gen", "filtered-osc:4"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == EXIT_USAGE


def test_bad_model_file(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("dimension: 2\nlocations: 3\n")
    assert main(["--model", str(p)]) == EXIT_USAGE


def test_parse_constraints():
    P = parse_constraints("y <= 0.5; 2*x - y >= -1; x = 3", ["x", "y"])
    assert np.allclose(P.A, [[0, 1], [-2, 1], [1, 0], [-1, 0]])
    assert np.allclose(P.b, [0.5, 1, 3, -3])
    P = parse_constraints("x + 1 < y - .5e1", ["x", "y"])
    assert np.allclose(P.A, [[1, -1]]) and np.allclose(P.b, [-6])
    for bad in ["y", "y <= ", "z <= 1", "2 ** y <= 1"]:
        with pytest.raises(ParseError):
            parse_constraints(bad, ["x", "y"])


# --- flowpipe output --------------------------------------------------------------

def test_box_step_has_four_rows(tmp_path):
    code, _ = run_text(model=LOOP, horizon=0.1, out=str(tmp_path / "fp.csv"))
    header, polys = read_flowpipe_csv(tmp_path / "fp.csv")
    assert header == ["flowpipe", "location", "step", "t_lo", "t_hi", "vertex", "x1", "x2"]
    assert list(polys) == [(0, 0)]
    assert polys[(0, 0)].shape == (4, 2)


def test_octagon_rows(tmp_path):
    path = tmp_path / "oct.csv"
    code, _ = run_text(gen="filtered-osc:2", blocks=2, template="octagon", horizon=1.0,
                       out=str(path), plot="x,y")
    assert code == EXIT_SAFE
    _, polys = read_flowpipe_csv(path)
    assert polys and all(3 <= len(V) <= 8 for V in polys.values())
    assert any(len(V) > 4 for V in polys.values())
    assert (tmp_path / "oct.svg").read_text().lstrip().startswith("<?xml")


def test_emitted_boxes_match_steps(tmp_path):
    H, d = generate_filtered_oscillator(2)
    r = reach(H, d.init, ReachConfig(delta=0.05, horizon=2.0, safety=d.safety))
    path = tmp_path / "fp.csv"
    emit_flowpipe(r.flowpipes, (0, 2), path, H.variables)
    _, polys = read_flowpipe_csv(path)
    assert len(polys) == r.stats.sets_total
    for f, rec in enumerate(r.flowpipes):
        for k in range(len(rec.flowpipe)):
            X = rec.flowpipe.step(k)
            V = polys[(f, k)]
            assert np.array_equal(V.min(axis=0), [X[0].lo, X[2].lo])
            assert np.array_equal(V.max(axis=0), [X[0].hi, X[2].hi])


def test_deterministic_output(tmp_path):
    outs = []
    for name in ("a", "b"):
        path = tmp_path / f"{name}.csv"
        code, text = run_text(gen="filtered-osc:4", delta=0.02, out=str(path), plot="x,y",
                              emit_stats=True)
        stable = [x for x in text.splitlines() if not x.startswith("time:")]
        outs.append((code, stable, path.read_bytes(), path.with_suffix(".svg").read_bytes()))
    assert outs[0] == outs[1]


def test_parallel_flag_same_result():
    a = run_text(gen="filtered-osc:4", delta=0.02, emit_stats=True)
    b = run_text(gen="filtered-osc:4", delta=0.02, emit_stats=True, parallel=2)
    strip = lambda t: [x for x in t[1].splitlines() if not x.startswith("time:")]
    assert a[0] == b[0] and strip(a) == strip(b)


def test_seed_variable(monkeypatch):
    monkeypatch.setenv("BLOCKREACH_SEED", "7")
    assert run_text(model=LOOP)[0] == EXIT_SAFE
    monkeypatch.setenv("BLOCKREACH_SEED", "seven")
    assert main(["--model", LOOP]) == EXIT_USAGE


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "blockreach", "--model", LOOP],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_SAFE
    assert "verdict: Safe" in proc.stdout


@pytest.mark.slow
def test_emit_stats_large_model():
    code, out = run_text(gen="filtered-osc:64", delta=0.0005, emit_stats=True)
    s = json.loads(next(x for x in out.splitlines() if x.startswith("stats: "))[len("stats: "):])
    assert code == EXIT_SAFE
    assert s["sets_completed_highdim"] < s["sets_total"]
