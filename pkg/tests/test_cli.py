import csv
import io
import json
import sys

import pytest

from reluzono.config import settings
from reluzono.main import cli_main


def run(capsys, *args):
    code = cli_main(list(args))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def pipe(monkeypatch, text):
    monkeypatch.setattr(sys, "stdin", io.StringIO(text))


def test_generate_and_solve_through_a_pipe(capsys, monkeypatch):
    code, out, _ = run(capsys, "gen", "d1", "--epsilon", "0")
    assert code == 0
    pipe(monkeypatch, out)
    code, out, _ = run(capsys, "solve", "exact", "--m", "1", "--loss", "l1", "--v", "1")
    assert code == 0
    doc = json.loads(out)
    assert doc["schema"] == "relu-zono-result/1"
    assert doc["command"] == "solve exact"
    assert doc["loss"] == pytest.approx(0.1, abs=1e-8)
    assert doc["accuracy"] is None
    assert doc["pattern"]["m"] == 1


def test_hidden_aliases_match(capsys):
    assert run(capsys, "gen", "d2", "--epsilon", "0.1")[1] == run(capsys, "gen", "flat", "--epsilon", "0.1")[1]


def test_solve_writes_artifacts(capsys, tmp_path):
    data = tmp_path / "synth.json"
    assert run(capsys, "gen", "synth", "--d", "2", "--m-gen", "1", "--out", str(data))[0] == 0
    net, trace = tmp_path / "net.json", tmp_path / "trace.jsonl"
    code, out, _ = run(
        capsys, "solve", "gls", "--data", str(data), "--m", "2", "--max-steps", "20", "--out", str(net), "--trace", str(trace)
    )
    assert code == 0
    doc = json.loads(out)
    assert doc["artifact_paths"] == [str(net), str(trace)]
    assert json.loads(net.read_text())["m"] == 2
    assert trace.read_text().strip()
    assert doc["qp_solves"] > 0


def test_usage_error(capsys):
    code, _, err = run(capsys, "solve", "exact", "--bogus")
    assert code == 2
    assert "--bogus" in err


def test_domain_error_goes_to_stderr(capsys, monkeypatch):
    _, out, _ = run(capsys, "gen", "collinear")
    pipe(monkeypatch, out)
    code, out, err = run(capsys, "solve", "exact", "--m", "1", "--v", "1,2")
    assert code == 1
    assert out == ""
    assert json.loads(err)["error"] == "InvalidParameter"


def test_bad_dataset_json(capsys, monkeypatch):
    pipe(monkeypatch, "{not json")
    code, _, err = run(capsys, "analyze", "chambers")
    assert code == 1
    assert json.loads(err)["error"] == "InvalidParameter"


def test_global_options_reach_settings(capsys, monkeypatch):
    _, out, _ = run(capsys, "gen", "collinear")
    pipe(monkeypatch, out)
    assert run(capsys, "--workers", "2", "--chamber-cap", "500", "analyze", "chambers")[0] == 0
    assert settings.workers == 2
    assert settings.chamber_cap == 500


# analyze ###########################


def test_analyze_chambers(capsys, monkeypatch):
    _, out, _ = run(capsys, "gen", "collinear")
    pipe(monkeypatch, out)
    code, out, _ = run(capsys, "analyze", "chambers", "--list")
    assert code == 0
    doc = json.loads(out)
    assert doc["chambers"] == 10
    assert doc["general_position_count"] == 22
    assert "list" in doc


def test_analyze_gp(capsys, monkeypatch):
    _, out, _ = run(capsys, "gen", "collinear")
    pipe(monkeypatch, out)
    doc = json.loads(run(capsys, "analyze", "gp")[1])
    assert doc["general_position"] is False
    assert doc["stability_radius"] == 0.0


def test_analyze_stability_needs_an_epsilon_for_degenerate_data(capsys, monkeypatch):
    _, out, _ = run(capsys, "gen", "flat")
    pipe(monkeypatch, out)
    assert run(capsys, "analyze", "stability", "--trials", "2")[0] == 1
    pipe(monkeypatch, out)
    code, out, _ = run(capsys, "analyze", "stability", "--epsilon", "0.05", "--trials", "2")
    assert code == 0
    assert json.loads(out)["trials"] == 2


def test_analyze_hardness(capsys):
    code, out, _ = run(capsys, "analyze", "hardness", "--universe", "2", "--subsets", "1;2")
    assert code == 0
    rows = json.loads(out)
    assert [r["cover_exists"] for r in rows] == [False, True]
    assert [r["loss_within"] for r in rows] == [False, True]


def test_gen_setcover(capsys):
    doc = json.loads(run(capsys, "gen", "setcover", "--universe", "2", "--subsets", "1;2;1,2")[1])
    assert (doc["n"], doc["d"]) == (7, 5)


# bench #############################


def test_bench_table(capsys):
    code, out, _ = run(capsys, "bench", "table", "--methods", "chunked,gls", "--ms", "2", "--seeds", "2", "--d", "1", "--m-gen", "2", "--max-steps", "10")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [r["method"] for r in rows] == ["chunked", "gls"]
    assert all(r["m_gen_or_N"] == "2" for r in rows)
    assert rows[0]["median_acc"] == ""
