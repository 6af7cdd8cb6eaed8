import json
from pathlib import Path

import pytest

from fedpostfair.cli import SEED_ENV, apply_overrides, main, resolve_seed

ROOT = Path(__file__).resolve().parents[1]
SYNTH = ROOT / "configs" / "synth_dp.json"
FAST = ["--set", "seeds=[0]", "--set", "optimizer.T=5", "--set", "optimizer.S=20",
        "--set", "optimizer.final_local_steps=50"]


def test_experiment_writes_artifacts_and_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["experiment", "--config", str(SYNTH), "--out", str(a), *FAST]) == 0
    assert main(["experiment", "--config", str(SYNTH), "--out", str(b), *FAST]) == 0
    for name in ("report.csv", "report.md", "report.json", "rounds.jsonl", "manifest.json"):
        assert (a / name).exists()
    for name in ("report.csv", "report.md", "report.json", "rounds.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["config"]["optimizer"]["T"] == 5
    assert str(SYNTH) in manifest["inputs"]
    assert set(manifest["outputs"]) >= {"report.csv", "rounds.jsonl"}


def test_unknown_flag_exits_1(tmp_path, capsys):
    assert main(["experiment", "--bogus", "--out", str(tmp_path)]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand_exits_1():
    assert main([]) == 1


def test_missing_config_exits_2(tmp_path):
    out = tmp_path / "o"
    assert main(["experiment", "--config", str(tmp_path / "nope.json"), "--out", str(out)]) == 2
    err = json.loads((out / "error.json").read_text())
    assert err["exit_code"] == 2


def test_bad_config_key_exits_2(tmp_path):
    assert main(["experiment", "--config", str(SYNTH), "--out", str(tmp_path), "--set", "bogus=1"]) == 2


def test_oracle_check_builtin(tmp_path, capsys):
    assert main(["oracle-check", "--instances", "builtin", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "oracle_report.json").read_text())
    assert report and all(r["ok"] for r in report)


def test_score_pipeline(tmp_path):
    scores = tmp_path / "scores"
    base = ["--config", str(SYNTH), "--seed", "0"]
    assert main(["train-scores", *base, "--out", str(scores)]) == 0
    val, test = scores / "scores_validation.csv", scores / "scores_test.csv"
    ingest = tmp_path / "ingest"
    assert main(["ingest-scores", "--out", str(ingest), "--set", f"validation_scores={val}",
                 "--set", f"test_scores={test}"]) == 0
    assert ingest.joinpath("scores_validation.csv").read_bytes() == val.read_bytes()
    post = tmp_path / "post"
    sets = ["--set", f"validation_scores={val}", "--set", f"test_scores={test}",
            "--set", "delta_local=0.02", "--set", "delta_global=0.02",
            "--set", 'optimizer={"T": 5, "S": 20, "lr": 0.003, "beta": 10000}']
    assert main(["postprocess", "--out", str(post), *sets]) == 0
    assert (post / "duals.json").exists() and (post / "rounds.jsonl").exists()
    ev = tmp_path / "eval"
    assert main(["evaluate", "--out", str(ev), *sets, "--set", f"duals={post / 'duals.json'}"]) == 0
    assert "M_DP^local" in (ev / "report.md").read_text()


def test_partition_manifest(tmp_path):
    assert main(["partition", "--config", str(SYNTH), "--seed", "1", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "partition.json").read_text())
    assert doc


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    assert resolve_seed({"seed": 1}, None) == 1
    monkeypatch.setenv(SEED_ENV, "2")
    assert resolve_seed({"seed": 1}, None) == 2
    assert resolve_seed({"seed": 1}, 3) == 3


def test_overrides():
    cfg = apply_overrides({"optimizer": {"T": 50}}, ["optimizer.T=7", "name=x", "alpha=null"])
    assert cfg == {"optimizer": {"T": 7}, "name": "x", "alpha": None}
