from __future__ import annotations

import io
import json
import subprocess
import sys

import numpy as np
import pytest

from countbreak.cli import main
from countbreak.models import ModelSpec, format_csv, parse_csv, simulate, simulate_with_change


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def change_csv(tmp_path):
    s = simulate_with_change(ModelSpec(1, 1), (1.0, 0.2, 0.2), (6.0, 0.2, 0.2), 150, 300, seed=5)
    path = tmp_path / "change.csv"
    path.write_text(format_csv(s, with_index=True))
    return path


@pytest.fixture
def monitor_data():
    return simulate_with_change(ModelSpec(1, 0), (1.0, 0.3), (5.0, 0.3), 110, 151, seed=17)


def test_simulate_is_deterministic(capsys):
    argv = ["simulate", "--model", "ingarch:1,1", "--theta", "0.4,0.15,0.2", "--n", "500", "--seed", "7"]
    code, out1, _ = run(capsys, *argv)
    _, out2, _ = run(capsys, *argv)
    assert code == 0 and out1 == out2
    series = parse_csv(out1)
    assert len(series) == 500
    expected = simulate(ModelSpec(1, 1), (0.4, 0.15, 0.2), 500, seed=7)
    assert np.array_equal(series.values, expected.values)


def test_simulate_change_and_json(capsys):
    code, out, _ = run(capsys, "simulate", "--theta", "0.4,0.15,0.2", "--theta2", "0.4,0.15,0.5",
                       "--change-at", "50", "--n", "100", "--r", "1", "--seed", "3", "--format", "json")
    rec = json.loads(out)
    assert code == 0 and len(rec["values"]) == 100 and rec["seed"] == 3


def test_missing_seed_is_echoed(capsys):
    code, out, err = run(capsys, "simulate", "--theta", "1,0.2,0.2", "--n", "10")
    seed = int(err.strip().split("seed: ")[1])
    _, again, _ = run(capsys, "simulate", "--theta", "1,0.2,0.2", "--n", "10", "--seed", str(seed))
    assert code == 0 and out == again


def test_simulate_argument_errors(capsys):
    code, _, err = run(capsys, "simulate", "--theta", "0.4,0.6,0.5", "--n", "10", "--seed", "1")
    assert code == 2 and err.startswith("error:")
    code, _, err = run(capsys, "simulate", "--theta", "0.4,0.1,0.1", "--change-at", "5", "--n", "10",
                       "--seed", "1")
    assert code == 2 and "--theta2" in err


def test_fit(capsys, change_csv):
    code, out, _ = run(capsys, "fit", str(change_csv), "--start", "1", "--end", "150")
    rep = json.loads(out)
    assert code == 0 and rep["schema"] == "countbreak.fit/1"
    assert rep["window"] == [1, 150] and len(rep["sandwich_se"]) == 3
    code, _, err = run(capsys, "fit", str(change_csv), "--start", "0", "--end", "150")
    assert code == 2 and "error" in err


def test_fit_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "fit", str(tmp_path / "nope.csv"))
    assert code == 2 and "no such file" in err


def test_retro_rejects_and_writes_profile(capsys, change_csv, tmp_path):
    prof = tmp_path / "profile.csv"
    code, out, _ = run(capsys, "retro", str(change_csv), "--critical-value", "3.0", "--profile", str(prof))
    rep = json.loads(out)
    assert code == 1 and rep["reject"] and abs(rep["t_hat"] - 150) <= 15
    assert prof.read_text().startswith("k,C_nk\n")
    code, out, _ = run(capsys, "retro", str(change_csv), "--critical-value", "1e9", "--format", "csv")
    assert code == 0 and out.startswith("k,C_nk")


def test_retro_reads_stdin(capsys, monkeypatch, change_csv):
    monkeypatch.setattr(sys, "stdin", io.StringIO(change_csv.read_text()))
    code, out, _ = run(capsys, "retro", "-", "--critical-value", "3.0")
    assert code == 1 and json.loads(out)["config"]["n"] == 300


def test_monitor_single_file(capsys, tmp_path, monitor_data):
    path = tmp_path / "all.csv"
    path.write_text(format_csv(monitor_data))
    trace = tmp_path / "trace.csv"
    code, out, _ = run(capsys, "monitor", str(path), "--model", "ingarch:1", "--m", "100",
                       "--boundary", "2.0", "--trace", str(trace))
    lines = [json.loads(x) for x in out.splitlines()]
    steps, final = lines[:-1], lines[-1]
    assert final["final"] and final["alarm"] == (code == 1)
    assert [s["k"] for s in steps] == list(range(101, 101 + len(steps)))
    assert all(set(s) == {"k", "D_k", "threshold", "ratio", "alarm"} for s in steps)
    assert steps[-1]["alarm"] == final["alarm"]
    assert not any(s["alarm"] for s in steps[:-1])
    assert len(trace.read_text().splitlines()) == len(steps) + 1


def test_monitor_streams_stdin(capsys, monkeypatch, tmp_path, monitor_data):
    hist = tmp_path / "hist.csv"
    hist.write_text(format_csv(monitor_data.head(100)))
    stream = "count\n" + "".join(f"{v}\n" for v in monitor_data.values[100:])
    monkeypatch.setattr(sys, "stdin", io.StringIO(stream))
    code, out, _ = run(capsys, "monitor", "--history", str(hist), "--model", "ingarch:1", "--boundary", "1e6")
    lines = [json.loads(x) for x in out.splitlines()]
    assert code == 0 and lines[-1]["stopped_at"] is None
    assert len(lines) - 1 == 51  # horizon floor(1.5 * 100) + 1 = 151


def test_monitor_subprocess_streaming(tmp_path, monitor_data):
    hist = tmp_path / "hist.csv"
    hist.write_text(format_csv(monitor_data.head(100)))
    proc = subprocess.run(
        [sys.executable, "-m", "countbreak", "monitor", "--history", str(hist), "--model", "ingarch:1",
         "--boundary", "2.0"],
        input="".join(f"{v}\n" for v in monitor_data.values[100:]), capture_output=True, text=True,
        timeout=120,
    )
    lines = [json.loads(x) for x in proc.stdout.splitlines()]
    assert proc.returncode == (1 if lines[-1]["alarm"] else 0)
    assert lines[-1]["final"]


def test_monitor_bad_stream(capsys, monkeypatch, tmp_path, monitor_data):
    hist = tmp_path / "hist.csv"
    hist.write_text(format_csv(monitor_data.head(100)))
    monkeypatch.setattr(sys, "stdin", io.StringIO("3\n-1\n"))
    code, _, err = run(capsys, "monitor", "--history", str(hist), "--model", "ingarch:1", "--boundary", "9")
    assert code == 2 and "negative" in err
    code, _, err = run(capsys, "monitor", str(hist), "--model", "ingarch:1")
    assert code == 2 and "--history" in err


def test_critval(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("COUNTBREAK_CACHE_DIR", str(tmp_path))
    argv = ["critval", "--d", "1", "--grid", "200", "--paths", "2000", "--seed", "3"]
    code, out, _ = run(capsys, *argv)
    first = json.loads(out)
    assert code == 0 and not first["cached"] and first["std_error"] > 0
    _, out, _ = run(capsys, *argv)
    second = json.loads(out)
    assert second["cached"] and second["value"] == first["value"]
    code, out, _ = run(capsys, "critval", "--model", "ingarch:1,1", "--functional", "udt", "--grid", "200",
                       "--paths", "1000", "--no-cache")
    rec = json.loads(out)
    assert code == 0 and rec["request"]["d"] == 3 and rec["request"]["functional"]["name"] == "u_dT"
    code, _, _ = run(capsys, "critval")
    assert code == 2


def test_replicate_small(capsys):
    argv = ["replicate", "--table", "2", "--model", "ingarch:1", "--theta", "1,0.3", "--theta2", "4,0.3",
            "--sizes", "60", "--reps", "3", "--seed", "11", "--boundary", "3.0"]
    code, out, _ = run(capsys, *argv)
    rep = json.loads(out)
    assert code == 0 and rep["schema"] == "countbreak.replicate/1"
    assert [c["hypothesis"] for c in rep["cells"]] == ["H0", "H1"]
    code, out, _ = run(capsys, *argv, "--format", "csv")
    assert out.splitlines()[0].startswith("size,hypothesis,rate")


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("countbreak ")
