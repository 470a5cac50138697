import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from dyncomm.cli import CliError, decay_rate, main, sample_times

PAIRS = "src,dst,start,duration\n0,1,0,30\n1,2,40,30\n2,3,80,30\n"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def events(tmp_path):
    path = tmp_path / "events.csv"
    path.write_text(PAIRS)
    return path


def run(*args):
    return main([str(a) for a in args])


class TestDecayRate:
    def test_e_per_day(self):
        assert decay_rate(decay_per_day="e") == 1 / 86400

    def test_factor(self):
        assert decay_rate(decay_per_day="2") == pytest.approx(math.log(2) / 86400, rel=1e-15)

    def test_half_life(self):
        assert decay_rate(half_life=3600) == pytest.approx(math.log(2) / 3600, rel=1e-15)

    def test_plain(self):
        assert decay_rate(b=0.25) == 0.25
        assert decay_rate() == 0.0

    def test_conflict(self):
        with pytest.raises(CliError):
            decay_rate(b=1.0, half_life=2.0)

    def test_bad_factor(self):
        with pytest.raises(CliError):
            decay_rate(decay_per_day="0.5")


def test_sample_times():
    assert sample_times("3", 10.0) == [0.0, 5.0, 10.0]
    assert sample_times("7,2", 10.0) == [2.0, 7.0]
    assert sample_times("1", 10.0) == [10.0]
    with pytest.raises(CliError):
        sample_times("20,3", 10.0)


def test_empty_input_gives_ones(tmp_path):
    src = tmp_path / "empty.csv"
    src.write_text("src,dst,start,duration\n")
    out = tmp_path / "out"
    assert run("run", "--input", src, "--n", 3, "--a", 0.1, "--b", 0.01, "--t-end", 100, "--samples", 5, "--out", out) == 0
    rows = read_csv(out / "series.csv")
    assert len(rows) == 15
    assert all(float(r["broadcast"]) == 1.0 and float(r["receive"]) == 1.0 for r in rows)


def test_run_outputs_and_manifest(events, tmp_path):
    out = tmp_path / "out"
    assert run("run", "--input", events, "--a", 1e-4, "--decay-per-day", "e", "--samples", 4, "--out", out, "--seed", 7) == 0
    series = read_csv(out / "series.csv")
    assert list(series[0]) == ["t", "node", "broadcast", "receive"]
    ranks = read_csv(out / "rank.csv")
    assert list(ranks[0]) == ["rank", "node", "broadcast", "receive", "bandwidth"]
    assert [int(r["rank"]) for r in ranks] == [1, 2, 3, 4]
    b = [float(r["broadcast"]) for r in ranks]
    assert b == sorted(b, reverse=True)
    m = json.loads((out / "manifest.json").read_text())
    assert m["a"] == 1e-4
    assert m["b"] == pytest.approx(1.157e-5, rel=1e-3)
    assert m["seed"] == 7 and m["version"] and m["steps"] > 0
    assert len(m["input_sha256"]) == 64


def test_receive_engine_matches_full(events, tmp_path):
    common = ["--input", events, "--a", 0.2, "--b", 0.01, "--abs-tol", 1e-7, "--rel-tol", 1e-7, "--samples", 3]
    assert run("run", *common, "--out", tmp_path / "full") == 0
    assert run("run", *common, "--engine", "receive", "--out", tmp_path / "recv") == 0
    full = read_csv(tmp_path / "full" / "series.csv")
    recv = read_csv(tmp_path / "recv" / "series.csv")
    assert "broadcast" not in recv[0]
    for f, r in zip(full, recv):
        assert f["t"] == r["t"] and f["node"] == r["node"]
        assert float(r["receive"]) == pytest.approx(float(f["receive"]), rel=20e-7)


def test_exact_engine(events, tmp_path):
    assert run("run", "--input", events, "--a", 0.2, "--engine", "exact", "--out", tmp_path / "o") == 0


def test_track_group_all_nodes(events, tmp_path):
    out = tmp_path / "g"
    assert run("track-group", "--input", events, "--a", 0.2, "--b", 0.01, "--group", "0,1,2,3", "--samples", 6, "--out", out) == 0
    rows = read_csv(out / "group.csv")
    assert rows[0]["t"] == "0" and float(rows[0]["value"]) == 0 and rows[0]["flag"] == "1"
    for r in rows[1:]:
        assert float(r["value"]) == pytest.approx(1.0, rel=1e-12) and r["flag"] == "0"


def test_track_group_unknown_node(events, tmp_path, capsys):
    assert run("track-group", "--input", events, "--a", 0.2, "--group", "0,9", "--out", tmp_path / "g") == 3
    assert "unknown node" in capsys.readouterr().err


def test_compare(events, tmp_path):
    out = tmp_path / "c"
    assert run("compare", "--input", events, "--a", 0.01, "--t-end", 120, "--dt", "1,0.5", "--engine", "exact", "--out", out) == 0
    rows = read_csv(out / "compare.csv")
    assert [float(r["dt"]) for r in rows] == [1.0, 0.5]


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("src,dst,start,duration\n0,1,x,3\n")
    assert run("run", "--input", bad, "--a", 0.1, "--out", tmp_path / "o") == 2
    assert "line 2" in capsys.readouterr().err


def test_missing_input_exit_code(tmp_path):
    assert run("run", "--input", tmp_path / "nope.csv", "--a", 0.1, "--out", tmp_path / "o") == 2


def test_validation_exit_code(events, tmp_path, capsys):
    assert run("run", "--input", events, "--a", 1.5, "--out", tmp_path / "o") == 3
    assert "attenuation" in capsys.readouterr().err


def test_integrator_exit_code(events, tmp_path):
    assert run("run", "--input", events, "--a", 0.1, "--b", 1e15, "--out", tmp_path / "o") == 4


def test_argparse_error_exit_code(tmp_path):
    with pytest.raises(SystemExit) as info:
        run("run", "--a", 0.1, "--out", tmp_path)
    assert info.value.code == 2


def test_synth_and_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"leader": 50, "members": [1, 2], "switch_time": 86400, "id_map": {"50": 51, "1": 52, "2": 53}}))
    for name in ("s1", "s2"):
        assert run("synth", "--seed", 3, "--config", cfg, "--n", 60, "--days", 2, "--out", tmp_path / name) == 0
    a = (tmp_path / "s1" / "scenario.csv").read_bytes()
    assert a == (tmp_path / "s2" / "scenario.csv").read_bytes()
    assert a.startswith(b"src,dst,start,duration\n")
    truth = json.loads((tmp_path / "s1" / "truth.json").read_text())
    assert truth["leader_before"] == 50 and truth["leader_after"] == 51 and truth["seed"] == 3


def test_synth_bad_config(tmp_path):
    assert run("synth", "--n", 10, "--out", tmp_path / "s") == 3


def test_replay_is_byte_identical(events, tmp_path):
    first = tmp_path / "first"
    assert run("run", "--input", events, "--a", 0.2, "--half-life", 50, "--samples", "0,33.3,110", "--out", first) == 0
    again = tmp_path / "again"
    assert run("replay", first / "manifest.json", "--out", again) == 0
    for name in ("series.csv", "rank.csv"):
        assert (first / name).read_bytes() == (again / name).read_bytes()
    m1 = json.loads((first / "manifest.json").read_text())
    m2 = json.loads((again / "manifest.json").read_text())
    m1.pop("wall_clock_seconds"), m2.pop("wall_clock_seconds")
    assert m1 == m2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dyncomm", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "dyncomm" in proc.stdout


def test_message_mode_run(tmp_path):
    src = tmp_path / "msg.csv"
    src.write_text("src,dst,time\n0,1,0\n1,2,5\n")
    out = tmp_path / "o"
    assert run("run", "--input", src, "--mode", "message", "--c", 0.1, "--a", 0.2, "--t-end", 20, "--out", out) == 0
    ranks = read_csv(out / "rank.csv")
    assert all(r["bandwidth"] == "" for r in ranks)
    assert run("run", "--input", src, "--mode", "message", "--c", 0.1, "--a", 0.2, "--engine", "exact", "--out", out) == 3
    assert np.isfinite([float(r["broadcast"]) for r in ranks]).all()
