import json
import subprocess
import sys
from pathlib import Path

import pytest

from ictxot import artifacts, cli

SMALL = {
    "train-parametric": {
        "task_family": {"count": 4},
        "train": {"epochs": 3, "base_lr": 1e-3, "n_grid": [10, 20]},
    },
    "scaling-law": {
        "task_family": {"count": 4},
        "train": {"epochs": 3, "base_lr": 1e-3, "n_grid": [10, 20]},
        "eval": {"test_n": [20, 40, 80, 160], "seeds": 2, "test_tasks": 3},
    },
    "train-nonparametric": {
        "task_family": {"count": 2},
        "model": {"hidden": 8, "heads": 2, "prompt_len": 8},
        "train": {"epochs": 2, "n_train": 8},
        "eval": {"held_out": 2, "queries": 16},
    },
    "validate-theory": {
        "eval": {"prop6_ns": [100, 1000, 10000], "prop6_seeds": 4, "mmd_resamples": 300, "mmd_m": 40},
    },
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, command, cfg=None, out="out", extra=()):
    argv = [command, "--out", str(tmp_path / out), "-q"]
    if cfg is not None:
        argv += ["--config", write_config(tmp_path, cfg, f"{out}.json")]
    return cli.main(argv + list(extra))


def read_table(path):
    rows = artifacts.read_csv(path)
    return list(rows[0]), rows


def data_files(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir()) if p.suffix in (".csv", ".json")}


def test_help_and_usage_errors(capsys):
    assert cli.main(["--help"]) == 0
    assert cli.main([]) == 2
    assert cli.main(["no-such-command"]) == 2
    assert cli.main(["train-parametric", "--seed", "abc"]) == 2


@pytest.mark.parametrize("bad", [
    "{not json",
    json.dumps({"bogus": {}}),
    json.dumps({"train": {"bogus": 1}}),
    json.dumps({"train": {"base_lr": -1}}),
    json.dumps({"task_family": {"kind": "Nope"}}),
    json.dumps([1, 2]),
])
def test_config_errors_exit_2(tmp_path, bad):
    path = tmp_path / "bad.json"
    path.write_text(bad)
    assert cli.main(["train-parametric", "--config", str(path), "--out", str(tmp_path / "o"), "-q"]) == 2


def test_missing_config_and_threads(tmp_path):
    assert cli.main(["validate-theory", "--config", str(tmp_path / "absent.json"), "-q"]) == 2
    assert cli.main(["validate-theory", "--threads", "0", "-q"]) == 2


def test_scaling_needs_too_few_lengths(tmp_path):
    cfg = {"eval": {"test_n": [100, 200]}}
    assert run(tmp_path, "scaling-law", cfg) == 2


def test_missing_artifacts_exit_3(tmp_path):
    cfg = {"eval": {"checkpoint": str(tmp_path / "nope.json")}}
    assert run(tmp_path, "scaling-law", cfg, "a") == 3
    cfg = {"eval": {"train": False}}
    assert run(tmp_path, "scaling-law", cfg, "b") == 3


def test_train_parametric_outputs(tmp_path):
    assert run(tmp_path, "train-parametric", SMALL["train-parametric"]) == 0
    out = tmp_path / "out"
    manifest = artifacts.read_json(out / "manifest.json")
    assert manifest["command"] == "train-parametric" and manifest["seed"] == 0
    assert set(manifest["outputs"]) == {"config", "checkpoint", "history", "plot"}
    header, rows = read_table(out / "history.csv")
    assert header == cli.HISTORY_PARAMETRIC and len(rows) == 3
    assert b"\r\n" in (out / "history.csv").read_bytes()
    assert "plot" in (out / "history.gp").read_text()


def test_scaling_law_from_checkpoint(tmp_path):
    assert run(tmp_path, "train-parametric", SMALL["train-parametric"], "train") == 0
    cfg = json.loads(json.dumps(SMALL["scaling-law"]))
    cfg["eval"]["checkpoint"] = str(tmp_path / "train" / "checkpoint.json")
    assert run(tmp_path, "scaling-law", cfg, "sweep") == 0
    header, rows = read_table(tmp_path / "sweep" / "sweep.csv")
    assert header == cli.SWEEP_COLUMNS and len(rows) == 8
    fit = artifacts.read_json(tmp_path / "sweep" / "fit.json")
    assert set(fit) >= {"excess_loss", "map_error"}


def test_synthetic_scaling_recovers_coefficients(tmp_path):
    cfg = {"eval": {"synthetic": {"a": 1.0, "b": 2.0, "c": 0.5}, "test_n": [100, 400, 1600, 6400]}}
    assert run(tmp_path, "scaling-law", cfg) == 0
    fit = artifacts.read_json(tmp_path / "out" / "fit.json")["excess_loss"]
    assert fit["a"] == pytest.approx(1.0, abs=1e-8) and fit["b"] == pytest.approx(2.0, abs=1e-6)
    assert fit["r2"] == pytest.approx(1.0)


@pytest.mark.parametrize("command", ["train-parametric", "scaling-law", "train-nonparametric"])
def test_byte_identical_reruns(tmp_path, command):
    assert run(tmp_path, command, SMALL[command], "one") == 0
    assert run(tmp_path, command, SMALL[command], "two") == 0
    a, b = data_files(tmp_path / "one"), data_files(tmp_path / "two")
    assert a.keys() == b.keys() and len(a) >= 3
    assert a == b
    assert run(tmp_path, command, SMALL[command], "three", ["--seed", "1"]) == 0
    c = data_files(tmp_path / "three")
    assert any(c[k] != a[k] for k in a if k != "config.json")


def test_nonparametric_outputs(tmp_path):
    assert run(tmp_path, "train-nonparametric", SMALL["train-nonparametric"]) == 0
    out = tmp_path / "out"
    header, rows = read_table(out / "predictions.csv")
    assert header == ["task", "x0", "x1", "yhat0", "yhat1", "t0", "t1"] and len(rows) == 32
    metrics = artifacts.read_json(out / "metrics.json")["tasks"]
    assert len(metrics) == 2 and all("spread_ratio" in m for m in metrics)


def test_validate_theory_and_injections(tmp_path):
    cfg = SMALL["validate-theory"]
    assert run(tmp_path, "validate-theory", cfg, "clean") == 0
    report = artifacts.read_json(tmp_path / "clean" / "report.json")
    assert report["failed"] == [] and len(report["checks"]) == 4
    assert run(tmp_path, "validate-theory", cfg, "q", ["--inject", "q_scale"]) == 1
    assert artifacts.read_json(tmp_path / "q" / "report.json")["failed"] == ["constructed square-root transport"]
    assert run(tmp_path, "validate-theory", cfg, "m", ["--inject", "biased_mmd"]) == 1
    failed = artifacts.read_json(tmp_path / "m" / "report.json")["failed"]
    assert len(failed) == 1 and "MMD" in failed[0].upper()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ictxot.cli", "train-parametric", "--config",
                           str(tmp_path / "absent.json")], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "config" in proc.stderr
