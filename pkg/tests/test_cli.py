import csv
import json

import pytest

from mfuq.cli import main

FAST = ["--n-sample", "1000", "--n-train", "20", "--n-variance", "100"]


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"n_ref": 10000, "model": {"family": "hidden-bimodal", "knobs": {}}}))
    return path


def run_cli(*argv):
    return main([str(a) for a in argv])


def test_full_run_and_rerun(tmp_path, config_file, capsys):
    out = tmp_path / "run"
    assert run_cli("metrics", "--all", "--config", config_file, "--out", out, *FAST) == 0
    assert "metrics: computed" in capsys.readouterr().out
    for name in ("density.json", "plot_bundle.csv", "metrics.jsonl"):
        assert (out / name).exists()
    first = (out / "density.json").read_bytes()
    assert run_cli("predict", "--config", config_file, "--out", out, *FAST) == 0
    assert "predict: up to date" in capsys.readouterr().out
    assert run_cli("predict", "--config", config_file, "--out", out, "--force", *FAST) == 0
    assert "predict: computed" in capsys.readouterr().out
    assert (out / "density.json").read_bytes() == first


def test_stagewise(tmp_path, config_file):
    out = tmp_path / "run"
    for stage in ("sample", "lf", "select", "fit", "predict", "metrics"):
        assert run_cli(stage, "--config", config_file, "--out", out, *FAST) == 0


def test_flags_override_config(tmp_path, config_file):
    out = tmp_path / "run"
    assert run_cli("sample", "--config", config_file, "--out", out, "--seed", 9, *FAST) == 0
    sidecar = json.loads((out / "samples.json").read_text())
    assert sidecar["seed"] == 9


def test_missing_artifact_exit_code(tmp_path, capsys):
    assert run_cli("fit", "--out", tmp_path / "empty") == 4
    assert "select" in capsys.readouterr().err


def test_stale_artifact_exit_code(tmp_path, config_file):
    out = tmp_path / "run"
    run_cli("lf", "--all", "--config", config_file, "--out", out, *FAST)
    assert run_cli("select", "--config", config_file, "--out", out, "--seed", 3, *FAST) == 4


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_train": 5000}))
    assert run_cli("sample", "--config", bad, "--out", tmp_path / "x") == 2
    assert run_cli("sample", "--family", "nope", "--out", tmp_path / "y") == 2
    assert "error" in capsys.readouterr().err


def test_speedup_default_table(tmp_path):
    assert run_cli("speedup", "--out", tmp_path) == 0
    rows = list(csv.DictReader((tmp_path / "speedup.csv").read_text().splitlines()))
    printed = [4.4, 9.3, 23.3]
    assert [abs(float(r["speed-up MF"]) - p) <= 0.05 for r, p in zip(rows, printed)] == [True] * 3


def test_speedup_custom_rows(tmp_path):
    spec = tmp_path / "rows.json"
    spec.write_text(json.dumps([{"label": "degree 6 to 3", "hf": {"k": 6, "h": 0.1, "d": 2, "tol": 1e-6},
                                 "lf": {"k": 3, "h": 0.1, "d": 2, "tol": 1e-6}, "n_mc": 7000, "n_train": 50}]))
    assert run_cli("speedup", "--config", spec, "--out", tmp_path / "t.csv") == 0
    row = next(csv.DictReader((tmp_path / "t.csv").read_text().splitlines()))
    assert float(row["f_HF/LF"]) == pytest.approx(8.66, abs=0.005)
    spec.write_text("{}")
    assert run_cli("speedup", "--config", spec, "--out", tmp_path / "u.csv") == 2
