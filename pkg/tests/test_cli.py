"""End-to-end CLI tests: happy path, exit codes, output confinement."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from fidonet.cli import main
from fidonet.providers import write_embedding


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth-data + train once; reused by the downstream command tests."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    assert run(["synth-data", "--seed", "7", "--n", "6", "--out", str(data_dir)]) == 0
    cfg = {
        "model": {"n_fft": 32, "n_filters": 8, "d_ws": 16, "heads": 2},
        "train": {
            "lr": 1e-3,
            "epochs": 2,
            "seed": 3,
            "provider": {"kind": "surrogate", "d_ws": 16, "seed": 0},
        },
    }
    cfg_path = root / "tiny.json"
    cfg_path.write_text(json.dumps(cfg))
    run_dir = root / "run"
    assert run([
        "train", "--manifest", str(data_dir / "manifest.jsonl"),
        "--config", str(cfg_path), "--out", str(run_dir),
    ]) == 0
    return {
        "root": root,
        "manifest": data_dir / "manifest.jsonl",
        "config": cfg_path,
        "checkpoint": run_dir / "checkpoint.ckpt",
        "run_dir": run_dir,
    }


class TestHappyPath:
    def test_train_outputs_exist(self, workspace):
        assert workspace["checkpoint"].exists()
        assert (workspace["run_dir"] / "loss_trace.csv").exists()
        assert (workspace["run_dir"] / "resolved_config.json").exists()

    def test_predict(self, workspace, tmp_path):
        out = tmp_path / "pred"
        assert run([
            "predict", "--checkpoint", str(workspace["checkpoint"]),
            "--manifest", str(workspace["manifest"]), "--out", str(out),
        ]) == 0
        rows = [json.loads(l) for l in (out / "predictions.jsonl").read_text().splitlines()]
        assert len(rows) == 6
        assert set(rows[0]) == {"id", "intelligibility", "haspi", "class"}
        assert 0.0 <= rows[0]["intelligibility"] <= 100.0

    def test_evaluate_with_track_filter(self, workspace, tmp_path):
        out = tmp_path / "eval"
        assert run([
            "evaluate", "--checkpoint", str(workspace["checkpoint"]),
            "--manifest", str(workspace["manifest"]), "--track", "1", "--out", str(out),
        ]) == 0
        doc = json.loads((out / "eval_report.json").read_text())
        assert doc["tracks"]["2"]["n"] == 0

    def test_attn_stats(self, workspace, tmp_path):
        out = tmp_path / "attn"
        assert run([
            "attn-stats", "--checkpoint", str(workspace["checkpoint"]),
            "--manifest", str(workspace["manifest"]), "--out", str(out),
        ]) == 0
        lines = (out / "attention_stats.csv").read_text().splitlines()
        assert lines[0] == "id,frame,stage,mean,std"
        stages = {l.split(",")[2] for l in lines[1:]}
        assert stages == {"before", "after"}

    def test_extract_cache(self, workspace, tmp_path):
        out = tmp_path / "cache"
        assert run([
            "extract", "--manifest", str(workspace["manifest"]), "--out", str(out),
        ]) == 0
        cache_dir = out / "cache"
        assert (cache_dir / "index.json").exists()
        assert list(cache_dir.glob("*.npy"))

    def test_inspect_emb(self, tmp_path, capsys):
        path = tmp_path / "x.l.femb"
        write_embedding(path, np.zeros((350, 16), dtype=np.float32))
        assert run(["inspect-emb", str(path)]) == 0
        doc = json.loads(capsys.readouterr().out.strip())
        assert doc["frames"] == 350 and doc["dim"] == 16

    def test_no_writes_outside_out(self, workspace, tmp_path, monkeypatch):
        out = tmp_path / "confined"
        cwd = tmp_path / "cwd"
        cwd.mkdir()
        monkeypatch.chdir(cwd)
        assert run([
            "predict", "--checkpoint", str(workspace["checkpoint"]),
            "--manifest", str(workspace["manifest"]), "--out", str(out),
        ]) == 0
        assert list(cwd.iterdir()) == []


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert run(["synth-data", "--seed", "1", "--n", "2", "--frobnicate", "x"]) == 1

    def test_unknown_command(self):
        assert run(["transmogrify"]) == 1

    def test_missing_checkpoint_is_data_error(self, workspace, tmp_path, caplog):
        code = run([
            "evaluate", "--checkpoint", str(tmp_path / "missing.ckpt"),
            "--manifest", str(workspace["manifest"]), "--out", str(tmp_path / "o"),
        ])
        assert code == 2
        assert "missing.ckpt" in caplog.text

    def test_bad_stft_hop_is_usage_error(self, workspace, tmp_path):
        code = run([
            "train", "--manifest", str(workspace["manifest"]),
            "--config", str(workspace["config"]),
            "--stft", "32,160", "--out", str(tmp_path / "o"),
        ])
        assert code == 1

    def test_unknown_config_key_rejected(self, workspace, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"model": {"n_fft": 32, "banana": 1}}))
        code = run([
            "train", "--manifest", str(workspace["manifest"]),
            "--config", str(bad), "--out", str(tmp_path / "o"),
        ])
        assert code == 1

    def test_corrupt_manifest_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "a"}\n')
        code = run(["extract", "--manifest", str(bad), "--out", str(tmp_path / "o")])
        assert code == 2


class TestDeterminism:
    def test_rerun_identical_loss_trace(self, workspace, tmp_path):
        out = tmp_path / "rerun"
        assert run([
            "train", "--manifest", str(workspace["manifest"]),
            "--config", str(workspace["config"]), "--out", str(out),
        ]) == 0
        a = (workspace["run_dir"] / "loss_trace.csv").read_text().splitlines()
        b = (out / "loss_trace.csv").read_text().splitlines()
        assert a[:11] == b[:11]

    def test_toml_config_equivalent(self, workspace, tmp_path):
        toml_cfg = tmp_path / "tiny.toml"
        toml_cfg.write_text(
            "\n".join([
                "[model]",
                "n_fft = 32",
                "n_filters = 8",
                "d_ws = 16",
                "heads = 2",
                "[train]",
                "lr = 1e-3",
                "epochs = 2",
                "seed = 3",
                "[train.provider]",
                'kind = "surrogate"',
                "d_ws = 16",
                "seed = 0",
            ])
        )
        out = tmp_path / "toml_run"
        assert run([
            "train", "--manifest", str(workspace["manifest"]),
            "--config", str(toml_cfg), "--out", str(out),
        ]) == 0
        a = (workspace["run_dir"] / "loss_trace.csv").read_bytes()
        b = (out / "loss_trace.csv").read_bytes()
        assert a == b
