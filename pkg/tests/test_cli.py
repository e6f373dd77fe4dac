import csv
import json

import pytest

from fasa import anfis
from fasa.cli import main
from fasa.synthetic import write_cic_like


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_cic_like(d / "raw.csv", n_benign=600, n_syn=4000, seed=3)
    assert main(["preprocess", "--input", str(d / "raw.csv"), "--output", str(d / "clean.csv")]) == 0
    return d


def test_preprocess_outputs(work, capsys):
    manifest = json.loads((work / "clean.manifest.json").read_text())
    assert len(manifest["features"]) == 7
    header = (work / "clean.csv").read_text().splitlines()[0].split(",")
    assert header == manifest["features"] + ["Label"]


def test_preprocess_is_idempotent(work, capsys):
    assert main(["preprocess", "--input", str(work / "clean.csv"), "--output", str(work / "again.csv")]) == 0
    assert (work / "again.csv").read_bytes() == (work / "clean.csv").read_bytes()
    out = capsys.readouterr().out
    assert "drop_nonfinite_rows" in out and "features:" in out


def test_preprocess_config_and_seed(work, tmp_path):
    cfg = tmp_path / "pp.json"
    cfg.write_text(json.dumps({"benign_fraction": 0.5}))
    out = tmp_path / "half.csv"
    assert main(["preprocess", "--input", str(work / "raw.csv"), "--output", str(out),
                 "--config", str(cfg), "--seed", "4"]) == 0
    labels = [row["Label"] for row in csv.DictReader(out.open())]
    assert labels.count("0") == labels.count("1") == 600


def test_train_is_deterministic(work, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert main(["train", "--input", str(work / "clean.csv"), "--output", str(path),
                     "--seed", "1", "--epochs", "8"]) == 0
    assert a.read_bytes() == b.read_bytes()
    report = json.loads(a.with_suffix(".report.json").read_text())
    assert report["test_metrics"]["accuracy"] > 0.95
    model = anfis.load(a)
    assert model.n_inputs == 7 and model.scaler is not None


def test_train_folds(work, tmp_path, capsys):
    out = tmp_path / "m.json"
    assert main(["train", "--input", str(work / "clean.csv"), "--output", str(out),
                 "--folds", "5", "--epochs", "4"]) == 0
    report = json.loads(out.with_suffix(".report.json").read_text())
    assert [f["fold"] for f in report["train"]["fold_metrics"]] == [0, 1, 2, 3, 4]
    assert capsys.readouterr().out.count("fold ") == 5


def test_eval(work, tmp_path, capsys):
    model = tmp_path / "m.json"
    assert main(["train", "--input", str(work / "clean.csv"), "--output", str(model), "--epochs", "8"]) == 0
    report = tmp_path / "eval.json"
    assert main(["eval", "--model", str(model), "--input", str(work / "clean.csv"), "--output", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert doc["tp"] + doc["fp"] + doc["tn"] + doc["fn"] == 3000
    roc = list(csv.reader(report.with_suffix(".roc.csv").open()))
    assert roc[0] == ["threshold", "fpr", "tpr"]
    assert "auc=" in capsys.readouterr().out
    assert main(["eval", "--model", str(model), "--input", str(work / "clean.csv"),
                 "--output", str(report), "--threshold", "0.9"]) == 0
    assert json.loads(report.read_text())["threshold"] == 0.9


def test_eval_missing_columns(work, tmp_path, capsys):
    model = tmp_path / "m.json"
    assert main(["train", "--input", str(work / "clean.csv"), "--output", str(model), "--epochs", "2"]) == 0
    bad = tmp_path / "bad.csv"
    bad.write_text("x,Label\n1,BENIGN\n2,Syn\n")
    assert main(["eval", "--model", str(model), "--input", str(bad), "--output", str(tmp_path / "r.json")]) == 1
    assert "missing model feature columns" in capsys.readouterr().err


def test_simulate(tmp_path, capsys):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"duration": 20, "attack_start": 5, "benign_flows": 4}))
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg), "--output", str(out)]) == 0
    for name in ("trace.jsonl", "timeline.csv", "decisions.jsonl", "report.json"):
        assert (out / name).is_file()
    report = json.loads((out / "report.json").read_text())
    assert report["first_malicious_decision"] == 10.0
    assert [m["kind"] for m in report["mitigations"]] == ["DropFromMac", "BlockPort"]
    assert report["evaluation"]["auc"] == 1.0
    assert "block installed at 10.000 s" in capsys.readouterr().out


def test_simulate_no_attack(tmp_path):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"duration": 10, "benign_flows": 4, "detector": {"pps_threshold": 500}}))
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg), "--output", str(out), "--no-attack"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["mitigations"] == [] and report["first_malicious_decision"] is None
    assert report["detector"]["pps_threshold"] == 500


def test_simulate_is_deterministic(tmp_path):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"duration": 12, "attack_start": 4, "benign_flows": 3}))
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path / name), "--seed", "3"]) == 0
    for f in ("trace.jsonl", "timeline.csv", "decisions.jsonl", "report.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.mark.parametrize(
    "argv,code",
    [
        (["preprocess", "--input", "/nonexistent.csv", "--output", "x.csv"], 2),
        (["train", "--output", "x.json"], 2),
        (["bogus"], 2),
        ([], 2),
        (["simulate"], 2),
        (["eval", "--model", "/nonexistent.json", "--input", "/nonexistent.csv", "--output", "r.json"], 2),
    ],
)
def test_usage_errors(argv, code, capsys):
    assert main(argv) == code


def test_domain_errors(tmp_path, capsys):
    bad_label = tmp_path / "udp.csv"
    bad_label.write_text("a,Label\n1,UDP\n")
    assert main(["preprocess", "--input", str(bad_label), "--output", str(tmp_path / "o.csv")]) == 1
    assert "unknown label" in capsys.readouterr().err

    one_class = tmp_path / "one.csv"
    one_class.write_text("a,b,Label\n1,2,Syn\n3,4,Syn\n5,6,Syn\n")
    assert main(["train", "--input", str(one_class), "--output", str(tmp_path / "m.json")]) == 1
    assert "degenerate labels" in capsys.readouterr().err

    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"duration": 10, "warp": 9}))
    assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path / "sim")]) == 1
    assert "warp" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "simulate" in capsys.readouterr().out
