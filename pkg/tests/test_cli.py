import csv
import json

import pytest

from tagrevise.cli import main


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["gen-synthetic", "--out", str(d), "--days", "180", "--seed", "3"]) == 0
    return d


def data_args(d):
    return ["--knowledge", str(d / "knowledge.json"), "--data", str(d / "data.csv"),
            "--split", str(d / "split.json")]


def test_gen_synthetic_outputs(synth):
    for name in ("data.csv", "split.json", "network.json", "knowledge.json",
                 "truth_model.json", "scenario.json"):
        assert (synth / name).is_file()
    with open(synth / "data.csv", newline="") as fh:
        assert next(csv.reader(fh)) == ["date", "station", "variable", "value"]
    split = json.loads((synth / "split.json").read_text())
    assert split["train"] == [0, 119] and split["test"] == [120, 179]


def test_simulate_noiseless_truth_is_exact(tmp_path):
    d = tmp_path / "clean"
    assert main(["gen-synthetic", "--out", str(d), "--days", "120", "--noise", "0"]) == 0
    out = tmp_path / "sim"
    assert main(["simulate", *data_args(d), "--model", str(d / "truth_model.json"),
                 "--out", str(out)]) == 0
    m = json.loads((out / "metrics.json").read_text())
    assert m["train_rmse"] == 0.0 and m["test_rmse"] == 0.0
    with open(out / "trajectory.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 120


def test_evaluate_predictions(tmp_path, capsys):
    p = tmp_path / "pred.csv"
    p.write_text("predicted,observed\n3,0\n4,0\n")
    assert main(["evaluate", "--predictions", str(p), "--out", str(tmp_path / "ev")]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["rmse"] == pytest.approx(3.5355339059327378, abs=1e-9)
    assert printed["mae"] == pytest.approx(3.5, abs=1e-9)
    assert json.loads((tmp_path / "ev" / "metrics.json").read_text()) == printed


def run_revise(synth, out, *extra):
    return main(["revise", *data_args(synth), "--out", str(out), "--seed", "5",
                 "--generations", "3", "--popsize", "12", "--set", "local_search_steps=1",
                 *extra])


def test_revise_is_deterministic(synth, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_revise(synth, a) == 0
    assert run_revise(synth, b) == 0
    for name in ("metrics.json", "best_model.json", "history.csv", "top_models.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    m = json.loads((a / "metrics.json").read_text())
    assert {"train_rmse", "test_rmse", "train_mae", "test_mae"} <= set(m)
    with open(a / "history.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 4


def test_calibrate_and_analyze(synth, tmp_path):
    out = tmp_path / "cal"
    assert main(["calibrate", *data_args(synth), "--out", str(out), "--seed", "1",
                 "--generations", "2", "--popsize", "10"]) == 0
    best = json.loads((out / "best_model.json").read_text())
    assert best["size"] == 1
    top = json.loads((out / "top_models.json").read_text())
    k = str(len(top))
    an = tmp_path / "an"
    assert main(["analyze", str(out / "top_models.json"), "--K", k, *data_args(synth),
                 "--out", str(an)]) == 0
    sel = json.loads((an / "selectivity.json").read_text())
    # calibration never changes structure, so nothing new is selected
    assert all(r["selectivity"] == 0.0 for r in sel["variables"].values())


@pytest.mark.parametrize("argv", [
    ["simulate", "--data", "missing.csv", "--split", "missing.json", "--out", "x"],
    ["revise", "--out", "x"],
    ["evaluate", "--predictions", "nope.csv"],
])
def test_errors_exit_nonzero(argv, tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_bad_override_rejected(synth, tmp_path, capsys):
    assert run_revise(synth, tmp_path / "r", "--set", "popsize=many") == 2
    assert run_revise(synth, tmp_path / "r", "--set", "nosuchfield=1") == 2
    assert not (tmp_path / "r").exists()


def test_analyze_too_few_models(synth, tmp_path):
    m = tmp_path / "m.json"
    m.write_text(json.dumps(json.loads((synth / "truth_model.json").read_text())))
    assert main(["analyze", str(m), "--K", "5", "--out", str(tmp_path / "an")]) == 2
