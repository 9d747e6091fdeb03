import hashlib
import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from collision_bench import cli
from collision_bench.harness import (ConfigError, ExperimentSpec, Protocol, build_spec,
                                     eval_expr, fit_scaling, read_config, read_results_csv,
                                     run_experiment, write_plot_data)
from collision_bench.results import CSV_HEADER, TrialResult


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_eval_expr():
    assert eval_expr("n^0.5", n=256) == 16
    assert eval_expr("n*sqrt(C)", n=100, C=4) == 200
    assert eval_expr("2^3 + 1") == 9
    assert eval_expr("-lg(8)") == -3
    for bad in ("__import__('os')", "n.real", "C", "1 +", "sqrt(-1)"):
        with pytest.raises(ConfigError):
            eval_expr(bad, n=4)


def test_smallest_run(tmp_path):
    out = tmp_path / "r.csv"
    spec = build_spec({"protocol": "CAB", "n": "2", "C": "1", "seeds": "1", "out": str(out)})
    res = run_experiment(spec)
    assert len(res) == 1 and res[0].successes == 2
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 2 and lines[1].startswith("CAB,2,1,0,")
    assert out.read_text().endswith("\n")


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    vals = {"protocol": "CAB", "n": "64,128", "C": "1,n^0.5", "seeds": "5", "base_seed": "77"}
    run_experiment(build_spec({**vals, "out": str(a)}))
    run_experiment(build_spec({**vals, "out": str(b)}))
    assert _digest(a) == _digest(b)


def test_parallel_matches_serial(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    vals = {"protocol": "STB", "n": "32,64", "C": "4", "seeds": "4"}
    run_experiment(build_spec({**vals, "out": str(a)}), workers=1)
    run_experiment(build_spec({**vals, "out": str(b)}), workers=3)
    assert _digest(a) == _digest(b)


def test_rows_independent_of_grid(tmp_path):
    small = run_experiment(build_spec({"n": "64", "C": "16", "seeds": "3"}))
    big = run_experiment(build_spec({"n": "32,64", "C": "1,16", "seeds": "3"}))
    rows = [r.csv_row() for r in big if r.n == 64 and r.C == 16]
    assert rows == [r.csv_row() for r in small]


def test_beb_rows_meet_floor(calibration):
    res = run_experiment(build_spec({"protocol": "BEB", "n": "256", "C": "16", "seeds": "10"}))
    assert len(res) == 10
    assert all(r.collisions >= calibration["collision_fraction"] * 256 for r in res)


def test_spec_validation():
    with pytest.raises(ConfigError):
        build_spec({"n": "1"})
    with pytest.raises(ConfigError):
        build_spec({"n": "4", "C": "17"})
    with pytest.raises(ConfigError):
        build_spec({"n": "4", "C": "0.5"})
    with pytest.raises(ConfigError):
        build_spec({"seeds": "0"})
    with pytest.raises(ConfigError):
        build_spec({"protocol": "ALOHA"})
    with pytest.raises(ConfigError):
        build_spec({"d": "-1"})
    with pytest.raises(ConfigError):
        build_spec({"colour": "red"})
    with pytest.raises(ConfigError):
        ExperimentSpec(n_values=[2.5]).grid()
    spec = build_spec({"n": "16", "C": "n^3", "kappa": "3"})
    assert spec.grid() == [(16, 4096.0)]


def test_config_file(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("# sweep\nprotocol = BEB\nn = 32, 64\nC = 1, n^0.5  # costs\n"
                   "seeds = 2\nengine = per_packet\nd = 100\n")
    vals = read_config(cfg)
    spec = build_spec(vals)
    assert spec.protocol is Protocol.BEB and spec.n_values == [32, 64]
    assert spec.cab_params.d == 100 and spec.engine.value == "per_packet"
    bad = tmp_path / "bad.cfg"
    bad.write_text("protocol BEB\n")
    with pytest.raises(ConfigError):
        read_config(bad)


def test_csv_roundtrip(tmp_path):
    out = tmp_path / "r.csv"
    run_experiment(build_spec({"n": "32", "C": "n^0.5", "seeds": "2", "out": str(out)}))
    back = read_results_csv(out)
    assert [r.csv_row() for r in back] == out.read_text().splitlines()[1:]


def test_trace_option_writes_files(tmp_path):
    out = tmp_path / "r.csv"
    res = run_experiment(build_spec({"n": "32", "C": "4", "seeds": "2", "trace": "true",
                                     "out": str(out)}))
    files = sorted((tmp_path / "r.csv.traces").iterdir())
    assert len(files) == 2
    assert all(r.contention_summary[0] >= 32 / 16 for r in res)


def _fake(n, C, y):
    return TrialResult("X", n, C, 0, int(y), 0, 0.0, n, False)


def test_fit_exact_linear():
    res = [_fake(x, 1, 7 * x) for x in (10, 100, 1000)]
    fit = fit_scaling(res, "n", "makespan")
    assert abs(fit.exponent - 1) <= 1e-9
    assert fit.intercept == pytest.approx(math.log(7), abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0)


def test_fit_quadratic_and_median():
    res = [_fake(x, 1, x * x) for x in (10, 100, 1000)]
    res += [_fake(10, 1, 10 ** 6), _fake(10, 1, 1)]  # median over the three at x = 10
    assert fit_scaling(res, "n", "makespan").exponent == pytest.approx(2.0, abs=1e-9)


def test_fit_needs_three_points():
    with pytest.raises(ConfigError):
        fit_scaling([_fake(x, 1, x) for x in (10, 100)], "n", "makespan")
    with pytest.raises(ConfigError):
        fit_scaling([_fake(x, 1, x) for x in (10, 100, 1000)], "n", "nonsense")


@given(st.floats(-3, 3), st.floats(0.1, 100))
def test_fit_recovers_power_law(k, a):
    xs = np.array([2.0, 16.0, 128.0, 1024.0])

    class R:
        def __init__(self, x):
            self.n, self.C, self.makespan = x, 1.0, a * x ** k
    fit = fit_scaling([R(x) for x in xs], "n", "makespan")
    assert abs(fit.exponent - k) <= 1e-9
    assert 0.0 <= fit.r_squared <= 1.0


def test_plot_data(tmp_path):
    fit = fit_scaling([_fake(x, 1, 3 * x) for x in (10, 100, 1000)], "n", "makespan")
    p = tmp_path / "plot.csv"
    write_plot_data(fit, p)
    rows = p.read_text().splitlines()
    assert rows[0] == "x,median_y,fitted_y" and len(rows) == 4


def test_threads_env(monkeypatch):
    from collision_bench import harness
    monkeypatch.setenv("COLLISION_BENCH_THREADS", "3")
    assert harness.thread_count() == 3
    monkeypatch.setenv("COLLISION_BENCH_THREADS", "x")
    with pytest.raises(ConfigError):
        harness.thread_count()


# CLI ------------------------------------------------------------------------

def test_cli_run_and_fit(tmp_path, capsys):
    cfg = tmp_path / "spec.txt"
    out = tmp_path / "res.csv"
    cfg.write_text(f"protocol = CAB\nn = 16,32,64\nC = 4\nseeds = 3\nout = {out}\n")
    assert cli.main(["run", "--spec", str(cfg), "--seeds", "2"]) == 0
    assert len(out.read_text().splitlines()) == 1 + 3 * 2
    capsys.readouterr()
    plot = tmp_path / "plot.csv"
    assert cli.main(["fit", "--csv", str(out), "--x", "n*sqrt(C)", "--y", "makespan",
                     "--plot-out", str(plot)]) == 0
    line = capsys.readouterr().out.strip()
    assert "\n" not in line
    rec = json.loads(line)
    assert set(rec) >= {"exponent", "intercept", "r_squared"}
    assert plot.exists()
    assert cli.main(["fit", "--csv", str(out), "--min-exponent", "50"]) == 2


def test_cli_run_to_stdout(capsys):
    assert cli.main(["run", "--protocol", "BEB", "--n", "8", "--C", "2", "--seeds", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(CSV_HEADER) and len(lines) == 3


def test_cli_errors(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["run", "--bogus"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["explode"])
    assert e.value.code == 1
    assert cli.main(["run", "--n", "1"]) == 1
    assert cli.main(["run", "--spec", "/nonexistent/file"]) == 1


def test_cli_verify_bounds(capsys):
    assert cli.main(["verify-bounds", "--samples", "2000"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 8


def test_cli_trace_analyze(tmp_path, capsys):
    t = tmp_path / "t.txt"
    t.write_text("0, 0.5, 0.5\n")
    assert cli.main(["trace-analyze", "--trace", str(t), "--C", "10"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["expected_collision_cost"] == pytest.approx(2.5)
    assert cli.main(["trace-analyze", "--trace", str(t), "--C", "10", "--n", "64"]) == 2
    t.write_text("0, 1.5\n")
    assert cli.main(["trace-analyze", "--trace", str(t), "--C", "10"]) == 1


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "collision_bench.cli", "run", "--n", "4",
                           "--C", "1"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("protocol,")
