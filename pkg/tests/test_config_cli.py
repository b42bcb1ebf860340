import csv
import io
from contextlib import redirect_stdout
from dataclasses import replace
from pathlib import Path

import pytest

from rtnetsim import cli
from rtnetsim.config import ConfigError, parse, point_label, sweep_points, warnings

MINI = """\
[scenario]
name = "mini"
experiment = "rx"
seed = 1
duration_s = 2.0

[rx]
mode = "diff"

[[flows]]
name = "steady"
port = 5001
priority = 3

[[flows]]
name = "random"
port = 5002
priority = 2

[[traffic]]
kind = "uniform"
rate = 200
dst_port = 5001

[[traffic]]
kind = "poisson"
rate = 300
dst_port = 5002
"""


def write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_unknown_key_is_line_anchored():
    bad = MINI.replace('mode = "diff"', 'mode = "diff"\nmoed = 3')
    with pytest.raises(ConfigError) as e:
        parse(bad, "s.toml")
    assert e.value.line == bad.splitlines().index("moed = 3") + 1
    assert str(e.value).startswith(f"s.toml:{e.value.line}:")
    assert "moed" in str(e.value)


def test_wrong_type_is_reported():
    with pytest.raises(ConfigError, match="rate"):
        parse(MINI.replace("rate = 200", 'rate = "fast"'))


def test_traffic_port_without_flow_warns():
    cfg = parse(MINI.replace("dst_port = 5002", "dst_port = 7000"))
    assert any("7000" in w for w in warnings(cfg))


def test_sweep_grid_and_labels():
    text = MINI + """
[[sweep]]
param = "traffic.1.rate"
values = [100, 200]

[[sweep]]
param = "rx.pool_size"
values = [16, 32, 64]
"""
    pts = sweep_points(parse(text))
    assert len(pts) == 6
    assign, cfg = pts[-1]
    assert cfg.traffic[1].rate == 200 and cfg.rx.pool_size == 64
    assert point_label(assign) == "rate=200.0_pool_size=64"
    assert point_label({}) == "run"


def test_sweep_of_unknown_param_is_rejected():
    with pytest.raises(ConfigError, match="nope"):
        parse(MINI + '\n[[sweep]]\nparam = "rx.nope"\nvalues = [1]\n')


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["validate", str(write(tmp_path, MINI))]) == 0
    bad = write(tmp_path, MINI + "\n[bogus]\nx = 1\n", "bad.toml")
    assert cli.main(["run", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "bad.toml:" in capsys.readouterr().err
    missing = MINI.replace('kind = "poisson"', 'kind = "trace"\nfile = "no-such-trace.csv"')
    assert cli.main(["run", str(write(tmp_path, missing, "m.toml")), "--out", str(tmp_path / "o2")]) == 2


def test_strict_turns_warnings_into_errors(tmp_path):
    p = write(tmp_path, MINI.replace("dst_port = 5002", "dst_port = 7000"))
    assert cli.main(["validate", str(p)]) == 0
    assert cli.main(["validate", str(p), "--strict"]) == 1


def test_seed_moves_poisson_columns_only(tmp_path):
    p = write(tmp_path, MINI)
    assert cli.main(["run", str(p), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", str(p), "--out", str(tmp_path / "b"), "--seed", "99"]) == 0
    a, b = read_csv(tmp_path / "a" / "run.csv"), read_csv(tmp_path / "b" / "run.csv")
    assert [r["delivered_steady"] for r in a] == [r["delivered_steady"] for r in b]
    assert [r["delivered_random"] for r in a] != [r["delivered_random"] for r in b]


def test_rerun_is_byte_identical_and_compares_to_zero(tmp_path):
    p = write(tmp_path, MINI)
    for d in ("a", "b"):
        assert cli.main(["run", str(p), "--out", str(tmp_path / d), "--jobs", "1"]) == 0
    for f in ("run.csv", "summary.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = cli.compare(str(tmp_path / "a"), str(tmp_path / "b"))
    assert rows and all(r["delta"] == 0 for r in rows)


def test_compare_rejects_mismatched_runs(tmp_path):
    assert cli.main(["run", str(write(tmp_path, MINI)), "--out", str(tmp_path / "rx")]) == 0
    assert cli.main(["run", "offload-reference", "--out", str(tmp_path / "off")]) == 0
    assert cli.main(["compare", str(tmp_path / "rx"), str(tmp_path / "off")]) == 2


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env-out"))
    assert cli.main(["run", str(write(tmp_path, MINI))]) == 0
    assert (tmp_path / "env-out" / "summary.csv").exists()


def test_parallel_sweep_matches_serial(tmp_path):
    text = MINI + '\n[[sweep]]\nparam = "traffic.0.rate"\nvalues = [100, 400]\n'
    p = write(tmp_path, text)
    assert cli.main(["run", str(p), "--out", str(tmp_path / "s")]) == 0
    assert cli.main(["run", str(p), "--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
    for f in sorted((tmp_path / "s").iterdir()):
        assert f.read_bytes() == (tmp_path / "p" / f.name).read_bytes()


def test_bundled_scenarios_validate():
    names = cli.bundled_names()
    assert len(names) >= 10
    buf = io.StringIO()
    with redirect_stdout(buf):
        for n in names:
            assert cli.main(["validate", n]) == 0, n


def test_list_prints_bundled_names(capsys):
    assert cli.main(["list"]) == 0
    assert "burst-600" in capsys.readouterr().out.split()
