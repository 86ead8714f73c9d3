import csv
import io
import json

import numpy as np
import pytest

from badge.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, run_cli


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run_cli(["simulate", "--p", "5", "--n", "40", "--ne", "3", "--seed", "1",
                    "--out", str(d)]) == EXIT_OK
    return d


@pytest.fixture(scope="module")
def fitted(sim, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    code = run_cli(["fit", "--input", str(sim / "data.csv"), "--out", str(out),
                    "--anneal-iters", "20", "--max-iters", "60", "--seed", "3"])
    assert code == EXIT_OK
    return out


def test_simulate_outputs(sim):
    lines = (sim / "data.csv").read_text().splitlines()
    assert len(lines) == 41
    truth = json.loads((sim / "truth.json").read_text())
    assert np.asarray(truth["support"]).shape == (40, 5, 5)


def test_fit_outputs(fitted):
    for name in ("model.json", "trace.csv", "run.json", "graph.json"):
        assert (fitted / name).exists()
    run = json.loads((fitted / "run.json").read_text())
    assert run["wall_time_seconds"] > 0
    rows = list(csv.DictReader(open(fitted / "trace.csv")))
    assert rows[0]["rate"] == "0.0"


def test_eval_self_is_perfect(sim, capsys):
    truth = str(sim / "truth.json")
    assert run_cli(["eval", "--est", truth, "--truth", truth]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["f1"] == 1.0
    assert "wall_time_seconds" not in rep


def test_eval_model(fitted, sim, capsys):
    assert run_cli(["eval", "--est", str(fitted / "model.json"),
                    "--truth", str(sim / "truth.json")]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert 0.0 <= rep["f1"] <= 1.0
    assert len(rep["per_time_edge_counts"]) == 40


def test_no_anneal_trace_is_monotone(sim, tmp_path):
    assert run_cli(["fit", "--input", str(sim / "data.csv"), "--out", str(tmp_path),
                    "--no-anneal", "--max-iters", "40"]) == EXIT_OK
    elbo = [float(r["elbo"]) for r in csv.DictReader(open(tmp_path / "trace.csv"))]
    assert np.all(np.diff(elbo) >= -1e-9 * np.abs(elbo[1:]))


def test_reproducible(sim, fitted, tmp_path):
    run_cli(["fit", "--input", str(sim / "data.csv"), "--out", str(tmp_path),
             "--anneal-iters", "20", "--max-iters", "60", "--seed", "3"])
    a = json.loads((fitted / "model.json").read_text())
    b = json.loads((tmp_path / "model.json").read_text())
    assert a["fit"]["elbo_trace"] == b["fit"]["elbo_trace"]
    assert a["s_marg"] == b["s_marg"]


def test_export(fitted, capsys):
    model = str(fitted / "model.json")
    assert run_cli(["export", "--model", model, "--what", "edges"]) == EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["t", "j", "k", "s_mean", "k_mean"]
    assert len(rows) == 1 + 40 * 10
    assert run_cli(["export", "--model", model, "--what", "elbo"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("iteration,elbo\n")
    assert run_cli(["export", "--model", model, "--what", "edge-counts"]) == EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 41


def test_fit_spectral_bands(tmp_path):
    assert run_cli(["simulate", "--kind", "var1", "--p", "4", "--n", "64", "--ne", "3",
                    "--out", str(tmp_path)]) == EXIT_OK
    out = tmp_path / "fit"
    assert run_cli(["fit-spectral", "--input", str(tmp_path / "data.csv"), "--out", str(out),
                    "--no-anneal", "--max-iters", "30", "--sample-rate", "64",
                    "--band", "1:16", "--band", "16:32"]) == EXIT_OK
    bands = json.loads((out / "bands.json").read_text())["bands"]
    assert [b["lo"] for b in bands] == [1.0, 16.0]
    graph = json.loads((out / "graph.json").read_text())
    assert np.asarray(graph["adjacency"]).shape == (1, 4, 4)


def test_usage_errors(capsys):
    assert run_cli([]) == EXIT_USAGE
    assert run_cli(["fit"]) == EXIT_USAGE
    assert run_cli(["simulate", "--p", "4", "--n", "10", "--ne", "99", "--out", "x"]) == EXIT_USAGE
    assert run_cli(["--help"]) == EXIT_OK


def test_io_errors(tmp_path):
    assert run_cli(["fit", "--input", str(tmp_path / "missing.csv")]) == EXIT_IO
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,x\n")
    assert run_cli(["fit", "--input", str(bad), "--out", str(tmp_path)]) == EXIT_IO
    junk = tmp_path / "junk.json"
    junk.write_text("{}")
    assert run_cli(["eval", "--est", str(junk), "--truth", str(junk)]) == EXIT_IO
