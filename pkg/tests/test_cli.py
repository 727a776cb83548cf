import csv
import json

import pytest

from terracarbon import cli
from terracarbon.grid import read_grid


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out", str(root), "--seed", "1", "--threads", "1"]) == 0
    config = json.loads((root / "config.json").read_text())
    config["model"].update(
        spec="D", technique="RF", grid={"n_trees": [8], "mtry": ["third"]}, params={"n_trees": 8, "mtry": "third"}
    )
    path = root / "run.json"
    path.write_text(json.dumps(config))
    return path


def run(*args):
    return cli.main([*args, "--threads", "1"])


def test_synth_requires_seed(tmp_path, capsys):
    assert cli.main(["synth", "--out", str(tmp_path)]) == 1
    assert "seed" in capsys.readouterr().err


def test_synth_bundle_is_self_describing(bundle):
    config = json.loads(bundle.read_text())
    assert config["version"] == 1
    names = {e["name"] for e in config["inputs"]}
    assert {"AGB", "SOC", "SOCD", "Inventory", "VH", "L11", "TWI"} <= names


def test_stack_writes_manifest(bundle, tmp_path):
    assert run("stack", "--config", str(bundle), "--out", str(tmp_path)) == 0
    manifest = json.loads((tmp_path / "stack.json").read_text())
    names = [layer["name"] for layer in manifest["layers"]]
    assert {"Woodland", "NonWoodland", "NDVI", "EVI", "SATVI"} <= set(names)
    assert read_grid(tmp_path / "TWI.tif").shape == (manifest["reference"]["height"], manifest["reference"]["width"])


def test_indices(bundle, tmp_path):
    assert run("indices", "--config", str(bundle), "--out", str(tmp_path)) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["EVI.tif", "NDVI.tif", "SATVI.tif"]


def test_dataset_and_select(bundle, tmp_path):
    assert run("dataset", "--config", str(bundle), "--out", str(tmp_path)) == 0
    with open(tmp_path / "AGB_D.csv") as fh:
        header = next(csv.reader(fh))
    assert header[-1] == "AGB" and "Woodland" in header
    assert (tmp_path / "folds.json").exists()
    assert run("select", "--config", str(bundle), "--out", str(tmp_path)) == 0
    trace = json.loads((tmp_path / "trace.json").read_text())
    assert trace["surviving"] and trace["version"] == 1


def test_train_evaluate_compare_map(bundle, tmp_path):
    train, ev, cmp_, mp = (tmp_path / d for d in ("train", "eval", "cmp", "map"))
    assert run("train", "--config", str(bundle), "--out", str(train)) == 0
    report = json.loads((train / "report.json").read_text())
    assert report["model_spec"] == "D" and report["best_params"] == {"n_trees": 8, "mtry": "third"}
    assert abs(sum(report["importance"].values()) - 100) < 1e-6

    config = json.loads(bundle.read_text())
    config["model"]["spec"] = "B"
    base_cfg = bundle.parent / "base.json"
    base_cfg.write_text(json.dumps(config))
    assert run("evaluate", "--config", str(base_cfg), "--out", str(ev)) == 0

    config["compare"] = {"reports": [str(train / "report.json"), str(ev / "report.json")], "baselines": {"AGB": "B"}}
    config["map"] = {"models": [str(train / "model.json")], "quicklook": True}
    cfg = bundle.parent / "post.json"
    cfg.write_text(json.dumps(config))
    assert run("compare", "--config", str(cfg), "--out", str(cmp_)) == 0
    with open(cmp_ / "compare.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["model"] for r in rows] == ["B", "D"]
    assert float(rows[0]["delta_pct"]) == 0.0

    assert run("map", "--config", str(cfg), "--out", str(mp)) == 0
    assert (mp / "AGB_prediction.tif").exists() and (mp / "AGB_error.png").exists()


def test_seed_flag_overrides_config(bundle, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("evaluate", "--config", str(bundle), "--out", str(a), "--seed", "5") == 0
    assert run("evaluate", "--config", str(bundle), "--out", str(b)) == 0
    assert json.loads((a / "report.json").read_text())["seed"] == 5
    assert json.loads((b / "report.json").read_text())["seed"] == 1


def test_errors_name_the_offending_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"spec": "D", "target": "AGB"}}))
    assert run("dataset", "--config", str(cfg), "--out", str(tmp_path / "o")) == 1
    assert "inputs" in capsys.readouterr().err

    cfg.write_text(json.dumps({"model": {"spec": "D", "target": "AGB", "technique": "SVM", "seed": 0}}))
    assert run("evaluate", "--config", str(cfg), "--out", str(tmp_path / "o")) == 1
    assert "model.technique" in capsys.readouterr().err

    missing = tmp_path / "in.json"
    missing.write_text(json.dumps({"inputs": [{"path": "nope.tif", "name": "x"}], "reference": {}}))
    assert run("stack", "--config", str(missing), "--out", str(tmp_path / "o")) == 1
    assert "nope.tif" in capsys.readouterr().err


def test_unknown_flag_exits_with_usage():
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--bogus"])
    assert exc.value.code == 2


def test_threads_resolution(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli.resolve_threads(None) == 3
    assert cli.resolve_threads(2) == 2
    assert cli.resolve_threads(0) >= 1
