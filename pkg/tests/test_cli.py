import json
import os

import numpy as np
import pytest

from icsc_pose.cli import main
from icsc_pose.metrics import MetricsReport


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def small_config(workdir):
    # small model and a handful of epochs keep the CLI round trip fast
    path = workdir / "config.json"
    path.write_text(json.dumps({
        "dataset": {"count": 10, "split": 7, "seed": 5},
        "model": {"input_size": 16, "conv_channels": [4, 8],
                  "dense_widths": [16]},
        "training": {"epochs": 2, "batch_size": 4, "learning_rate": 1e-3},
    }))
    return str(path)


@pytest.fixture(scope="module")
def cli_dataset(workdir, small_config):
    out = str(workdir / "data")
    assert main(["gen-dataset", "--config", small_config, "--out", out]) == 0
    return out


@pytest.fixture(scope="module")
def cli_run(workdir, small_config, cli_dataset):
    out = str(workdir / "run")
    code = main(["train", cli_dataset, "--config", small_config,
                 "--out", out, "--quiet"])
    assert code == 0
    return out


class TestGenDataset:
    def test_creates_manifest_and_images(self, cli_dataset):
        assert os.path.exists(os.path.join(cli_dataset, "manifest.jsonl"))
        assert os.path.exists(os.path.join(cli_dataset, "images", "000009.png"))

    def test_count_override(self, workdir, small_config, capsys):
        out = str(workdir / "data3")
        assert main(["gen-dataset", "--config", small_config, "--count", "3",
                     "--split", "2", "--out", out]) == 0
        lines = open(os.path.join(out, "manifest.jsonl")).read().splitlines()
        assert len(lines) == 4  # header + 3 records
        assert "generated 3 images" in capsys.readouterr().out


class TestTrain:
    def test_writes_log_and_checkpoint(self, cli_run):
        assert os.path.exists(os.path.join(cli_run, "checkpoint.npz"))
        log = os.path.join(cli_run, "train_log.jsonl")
        entries = [json.loads(ln) for ln in open(log) if ln.strip()]
        assert {e["split"] for e in entries} == {"train", "val"}

    def test_loss_flag_overrides_config(self, workdir, small_config,
                                        cli_dataset):
        out = str(workdir / "run_beta")
        assert main(["train", cli_dataset, "--config", small_config,
                     "--loss", "beta", "--epochs", "1", "--out", out,
                     "--quiet"]) == 0
        from icsc_pose.checkpoint import Checkpoint

        assert Checkpoint.load(os.path.join(out, "checkpoint.npz")).loss_selector == "beta"

    def test_seed_env_fallback(self, workdir, small_config, cli_dataset,
                               monkeypatch):
        out = str(workdir / "run_env")
        monkeypatch.setenv("ICSC_POSE_SEED", "123")
        assert main(["train", cli_dataset, "--config", small_config,
                     "--epochs", "1", "--out", out, "--quiet"]) == 0
        from icsc_pose.checkpoint import Checkpoint

        assert Checkpoint.load(os.path.join(out, "checkpoint.npz")).seed == 123

    def test_bad_seed_env_is_usage_error(self, workdir, small_config,
                                         cli_dataset, monkeypatch, capsys):
        monkeypatch.setenv("ICSC_POSE_SEED", "not-a-number")
        code = main(["train", cli_dataset, "--config", small_config,
                     "--out", str(workdir / "run_bad"), "--quiet"])
        assert code == 2
        assert "ICSC_POSE_SEED" in capsys.readouterr().err


class TestEval:
    def test_report_files(self, workdir, cli_run, cli_dataset, capsys):
        out = str(workdir / "eval")
        pred_path = str(workdir / "pred.jsonl")
        ckpt = os.path.join(cli_run, "checkpoint.npz")
        assert main(["eval", ckpt, cli_dataset, "--subset", "val",
                     "--out", out, "--predictions", pred_path]) == 0
        captured = capsys.readouterr().out
        assert "position [m]" in captured
        report = MetricsReport.from_json(
            open(os.path.join(out, "metrics.json")).read())
        assert report.count == 3  # 10 images, split 7
        rows = [json.loads(ln) for ln in open(pred_path) if ln.strip()]
        assert len(rows) == 3

    def test_missing_checkpoint_is_io_error(self, cli_dataset, workdir):
        assert main(["eval", str(workdir / "nope.npz"), cli_dataset]) == 3

    def test_missing_dataset_is_io_error(self, cli_run, workdir):
        ckpt = os.path.join(cli_run, "checkpoint.npz")
        assert main(["eval", ckpt, str(workdir / "nodata")]) == 3


class TestOverlay:
    def test_truth_overlay(self, workdir, cli_run, cli_dataset):
        out = str(workdir / "ov")
        ckpt = os.path.join(cli_run, "checkpoint.npz")
        assert main(["overlay", ckpt, cli_dataset, "--index", "2", "--truth",
                     "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "overlay_000002.png"))

    def test_worst_n(self, workdir, cli_run, cli_dataset):
        out = str(workdir / "ov_worst")
        ckpt = os.path.join(cli_run, "checkpoint.npz")
        assert main(["overlay", ckpt, cli_dataset, "--worst", "2",
                     "--out", out]) == 0
        files = sorted(os.listdir(out))
        assert len(files) == 2

    def test_prediction_overlay(self, workdir, cli_run, cli_dataset):
        out = str(workdir / "ov_pred")
        ckpt = os.path.join(cli_run, "checkpoint.npz")
        assert main(["overlay", ckpt, cli_dataset, "--index", "0",
                     "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "overlay_000000.png"))


class TestGradcheckCommand:
    def test_losses_scope_passes(self, capsys):
        assert main(["gradcheck", "--scope", "losses", "--trials", "10"]) == 0
        out = capsys.readouterr().out
        assert "all gradient checks passed" in out
        assert "FAIL" not in out


class TestConfigCommand:
    def test_dump_defaults(self, capsys):
        assert main(["config", "dump-defaults"]) == 0
        parsed = json.loads(capsys.readouterr().out)
        assert parsed["dataset"]["count"] == 2200

    def test_unknown_config_key_exit_2(self, workdir, capsys):
        bad = workdir / "bad.json"
        bad.write_text(json.dumps({"nope": 1}))
        assert main(["gen-dataset", "--config", str(bad),
                     "--out", str(workdir / "x")]) == 2
        assert "unknown config key" in capsys.readouterr().err


class TestCompare:
    def test_needs_three_seeds(self, cli_dataset, small_config, capsys):
        code = main(["compare", cli_dataset, cli_dataset, "--config",
                     small_config, "--seeds", "1,2", "--quiet"])
        assert code == 2
        assert "3 seeds" in capsys.readouterr().err

    def test_small_comparison(self, workdir, small_config, cli_dataset,
                              capsys):
        out = str(workdir / "cmp")
        code = main(["compare", cli_dataset, cli_dataset, "--config",
                     small_config, "--epochs", "1", "--seeds", "1,2,3",
                     "--out", out, "--quiet"])
        assert code == 0
        results = json.load(open(os.path.join(out, "comparison.json")))
        assert set(results) >= {"learnable", "icsc", "delta_icsc_vs_learnable"}
        assert len(results["icsc"]["runs"]) == 3
        table = capsys.readouterr().out
        assert "delta_icsc_vs_learnable" in table
