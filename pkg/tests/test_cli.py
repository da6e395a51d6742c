import csv
import json

import pytest

from cool_drmc import cli
from cool_drmc.sim import builtin_scenario, scenario_to_dict


def short(tmp_path, name, T, **over):
    d = scenario_to_dict(builtin_scenario(name).with_overrides(T=T))
    d.update(over)
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(d, indent=2))
    return str(p)


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_run_writes_three_outputs(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["run", "minimal", "--out", str(out)]) == 0
    assert (out / "summary.json").is_file() and (out / "metrics.csv").is_file()
    traces = list((out / "traces").glob("*.jsonl"))
    assert len(traces) == 1
    recs = [json.loads(l) for l in traces[0].read_text().splitlines()]
    assert recs and {"t", "robot", "x", "u", "sources"} <= set(recs[0])
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["episodes"]) == 1


def test_ten_seed_batch(tmp_path, monkeypatch):
    monkeypatch.setenv("COOL_DRMC_THREADS", "1")
    out = tmp_path / "o"
    assert cli.main(["run", short(tmp_path, "minimal", 5), "--seeds", "0-9", "--out", str(out)]) == 0
    r = rows(out / "metrics.csv")
    assert len(r) == 10
    assert list(r[0]) == cli.RUN_COLUMNS
    assert sorted(int(x["seed"]) for x in r) == list(range(10))


def test_same_seed_traces_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for o in (a, b):
        assert cli.main(["run", "minimal", "--seeds", "3", "--out", str(o), "--no-timing"]) == 0
    fa = (a / "traces" / "minimal_COOL_3.jsonl").read_bytes()
    fb = (b / "traces" / "minimal_COOL_3.jsonl").read_bytes()
    assert fa == fb and len(fa) > 0


def test_malformed_scenario_exit_2(tmp_path, capsys):
    d = scenario_to_dict(builtin_scenario("minimal"))
    del d["robots"][0]["radius"]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d, indent=2))
    assert cli.main(["run", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "line " in capsys.readouterr().err
    assert cli.main(["validate", str(p)]) == 2


def test_missing_scenario_exit_2(tmp_path):
    assert cli.main(["validate", str(tmp_path / "nope.json")]) == 2


@pytest.mark.parametrize("name", ["minimal", "tracking", "m_tradeoff", "crossing"])
def test_bundled_scenarios_validate(name, capsys):
    assert cli.main(["validate", name]) == 0
    assert "ok" in capsys.readouterr().out


def test_parse_seeds():
    assert cli.parse_seeds("0-2,7") == [0, 1, 2, 7]
    assert cli.parse_seeds("5") == [5]
    with pytest.raises(ValueError):
        cli.parse_seeds(" , ")


def test_threads_cap(monkeypatch):
    monkeypatch.setenv("COOL_DRMC_THREADS", "2")
    assert cli._threads(10) == 2
    assert cli._threads(1) == 1
    monkeypatch.delenv("COOL_DRMC_THREADS")
    assert cli._threads(3) >= 1


def test_dump_sdp(tmp_path):
    dump = tmp_path / "sdp"
    assert cli.main(["run", "minimal", "--out", str(tmp_path / "o"), "--dump-sdp", str(dump)]) == 0
    files = sorted(dump.glob("*.dat-s"))
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert len(files) == summary["episodes"][0]["metrics"]["n_sdp"] > 0


# plot


def test_plot_empty_trace(tmp_path):
    src, dst = tmp_path / "e.jsonl", tmp_path / "e.svg"
    src.write_text("")
    assert cli.main(["plot", str(src), str(dst)]) == 0
    svg = dst.read_text()
    assert svg.startswith("<svg") and "<polyline" not in svg


def test_plot_three_robots(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["run", short(tmp_path, "crossing", 4), "--out", str(out), "--no-timing"]) == 0
    trace = next((out / "traces").glob("*.jsonl"))
    dst = tmp_path / "c.svg"
    assert cli.main(["plot", str(trace), str(dst)]) == 0
    svg = dst.read_text()
    assert svg.count("<polyline") == 3
    assert all(f"robot-{rid}" in svg for rid in ("r0", "r1", "r2"))
    # pure function of the trace
    again = tmp_path / "c2.svg"
    cli.main(["plot", str(trace), str(again)])
    assert again.read_bytes() == dst.read_bytes()


def test_plot_missing_fields_exit_2(tmp_path):
    src = tmp_path / "bad.jsonl"
    src.write_text(json.dumps({"t": 0, "robot": "a"}) + "\n")
    assert cli.main(["plot", str(src), str(tmp_path / "x.svg")]) == 2


# sweep


def test_sweep_two_rows_and_dedup(tmp_path):
    path = short(tmp_path, "m_tradeoff", 3)
    out = tmp_path / "s.csv"
    assert cli.main(["sweep-m", path, "--Ms", "10,1,10", "--out", str(out)]) == 0
    r = rows(out)
    assert [int(x["M"]) for x in r] == [1, 10]
    assert list(r[0]) == cli.SWEEP_COLUMNS
    dst = tmp_path / "s.svg"
    assert cli.main(["plot", str(out), str(dst)]) == 0
    assert "<polyline" in dst.read_text()


def test_sweep_identity_flag(tmp_path):
    path = short(tmp_path, "m_tradeoff", 12)
    out = tmp_path / "s.csv"
    assert cli.main(["sweep-m", path, "--Ms", "1,100", "--out", str(out)]) == 0
    r = {int(x["M"]): x for x in rows(out)}
    assert r[100]["identity_compression"] == "True"
    assert r[1]["identity_compression"] == "False"


def test_sweep_rejects_nonpositive(tmp_path):
    assert cli.main(["sweep-m", "minimal", "--Ms", "0,1"]) == 2
