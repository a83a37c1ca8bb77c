"""Command-line surface tests using click's test runner."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from clearsky.cli import cli, default_degradation, synthesize_dataset
from clearsky.config import PRESETS, ConfigError, apply_preset
from clearsky.imaging import load_dataset, save_dataset


@pytest.fixture
def runner():
    return CliRunner()


def _dataset_bytes(root: Path) -> dict:
    return {p.relative_to(root): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestSynth:
    def test_writes_expected_counts(self, runner, tmp_path):
        res = runner.invoke(cli, ["synth", "--out", str(tmp_path / "d"),
                                  "--kinds", "haze,rain",
                                  "--train-count", "4", "--test-count", "2",
                                  "--size", "24", "--seed", "0"])
        assert res.exit_code == 0, res.output
        for kind in ("haze", "rain"):
            train = load_dataset(tmp_path / "d" / f"{kind}_train")
            test = load_dataset(tmp_path / "d" / f"{kind}_test")
            assert len(train) == 4 and len(test) == 2
            assert train.task_kind == kind

    def test_rerun_byte_identical(self, runner, tmp_path):
        args = ["synth", "--kinds", "haze", "--train-count", "3",
                "--test-count", "2", "--size", "24", "--seed", "7"]
        runner.invoke(cli, args + ["--out", str(tmp_path / "a")])
        runner.invoke(cli, args + ["--out", str(tmp_path / "b")])
        a = _dataset_bytes(tmp_path / "a")
        b = _dataset_bytes(tmp_path / "b")
        assert a == b

    def test_seed_changes_content(self, runner, tmp_path):
        base = ["synth", "--kinds", "haze", "--train-count", "3",
                "--test-count", "2", "--size", "24"]
        runner.invoke(cli, base + ["--seed", "0", "--out", str(tmp_path / "a")])
        runner.invoke(cli, base + ["--seed", "1", "--out", str(tmp_path / "b")])
        a = _dataset_bytes(tmp_path / "a")
        b = _dataset_bytes(tmp_path / "b")
        assert set(a) == set(b)
        assert a != b

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            synthesize_dataset("fog", "train", 2, 24, 0)

    def test_degradation_scales_with_size(self):
        small = default_degradation("rain", 24, 0)
        big = default_degradation("rain", 96, 0)
        assert big.rain.streak_count > small.rain.streak_count
        assert big.snow.flake_count > small.snow.flake_count


class TestPresets:
    def test_finetune_diff_keys(self):
        # fine-tuning differs from the full method only in the balance
        # weights and the replay budget
        assert set(PRESETS["finetune"]) == {"loss.alpha", "loss.lam",
                                            "buffer_capacity"}
        assert PRESETS["finetune"]["loss.alpha"] == 0.0
        assert PRESETS["full_method"]["loss.alpha"] == 1.0

    def test_apply_preset_on_sparse_config(self):
        d = apply_preset({"tasks": []}, "er_lsw")
        assert d["replay_mode"] == "er"
        assert d["loss"]["alpha"] == 0.0
        assert d["buffer_capacity"] == 64

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            apply_preset({}, "nope")


@pytest.fixture(scope="session")
def cli_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("clidata")
    for kind in ("haze", "rain"):
        for split, count in (("train", 5), ("test", 2)):
            save_dataset(synthesize_dataset(kind, split, count, 24, 3),
                         root / f"{kind}_{split}")
    return root


def _config_file(root: Path, path: Path, kinds=("haze", "rain")) -> Path:
    cfg = {
        "tasks": [
            {"kind": k, "train_dir": str(root / f"{k}_train"),
             "test_dir": str(root / f"{k}_test")}
            for k in kinds
        ],
        "backbone": {"base_channels": 8, "num_groups": 1,
                     "blocks_per_group": 1},
        "steps_per_task": 4,
        "buffer_capacity": 8,
        "projector": {"epochs": 3},
    }
    path.write_text(json.dumps(cfg))
    return path


class TestTrain:
    def test_train_writes_report(self, runner, cli_data, tmp_path):
        cfg = _config_file(cli_data, tmp_path / "cfg.json")
        out = tmp_path / "run"
        res = runner.invoke(cli, ["train", "--config", str(cfg),
                                  "--out", str(out)])
        assert res.exit_code == 0, res.output
        report = json.loads((out / "report.json").read_text())
        assert len(report["rows"]) == 3

    def test_override_reflected_in_report(self, runner, cli_data, tmp_path):
        cfg = _config_file(cli_data, tmp_path / "cfg.json", kinds=("haze",))
        out = tmp_path / "run"
        res = runner.invoke(cli, [
            "train", "--config", str(cfg), "--out", str(out),
            "--override", "loss.alpha=0.5",
            "--override", "steps_per_task=2",
        ])
        assert res.exit_code == 0, res.output
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["loss"]["alpha"] == 0.5
        assert report["config"]["steps_per_task"] == 2

    def test_preset_reflected_in_report(self, runner, cli_data, tmp_path):
        cfg = _config_file(cli_data, tmp_path / "cfg.json", kinds=("haze",))
        out = tmp_path / "run"
        res = runner.invoke(cli, ["train", "--config", str(cfg),
                                  "--preset", "finetune",
                                  "--out", str(out)])
        assert res.exit_code == 0, res.output
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["loss"]["alpha"] == 0.0
        assert report["config"]["buffer_capacity"] == 0

    def test_resume_flag(self, runner, cli_data, tmp_path):
        cfg = _config_file(cli_data, tmp_path / "cfg.json")
        out = tmp_path / "run"
        res = runner.invoke(cli, ["train", "--config", str(cfg),
                                  "--out", str(out)])
        assert res.exit_code == 0, res.output
        before = (out / "report.csv").read_bytes()
        # resuming a finished run re-evaluates nothing and keeps the report
        res = runner.invoke(cli, ["train", "--config", str(cfg),
                                  "--out", str(out), "--resume"])
        assert res.exit_code == 0, res.output
        assert (out / "report.csv").read_bytes() == before


class TestEvalAndReport:
    @pytest.fixture(scope="class")
    def finished_run(self, cli_data, tmp_path_factory):
        out = tmp_path_factory.mktemp("clirun")
        cfg = _config_file(cli_data, out / "cfg.json")
        res = CliRunner().invoke(cli, ["train", "--config", str(out / "cfg.json"),
                                       "--out", str(out / "run")])
        assert res.exit_code == 0, res.output
        return out / "run"

    def test_eval_command(self, runner, cli_data, finished_run, tmp_path):
        ckpt = finished_run / "checkpoints" / "task_2.backbone.ckpt"
        out_csv = tmp_path / "eval.csv"
        res = runner.invoke(cli, ["eval", "--checkpoint", str(ckpt),
                                  "--data", str(cli_data / "haze_test"),
                                  "--data", str(cli_data / "rain_test"),
                                  "--out", str(out_csv)])
        assert res.exit_code == 0, res.output
        lines = out_csv.read_text().strip().splitlines()
        assert lines[0] == "dataset,psnr_db,ssim"
        assert len(lines) == 3

    def test_report_command(self, runner, finished_run, tmp_path):
        out = tmp_path / "rep"
        res = runner.invoke(cli, ["report", str(finished_run),
                                  "--out", str(out)])
        assert res.exit_code == 0, res.output
        assert (out / f"{finished_run.name}_metrics.csv").exists()
        written = [Path(line) for line in res.output.strip().splitlines()]
        assert all(p.exists() for p in written)


class TestExitCodes:
    def test_bad_config_exits_2(self, tmp_path, monkeypatch, capsys):
        from clearsky.cli import main
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        monkeypatch.setattr("sys.argv", ["clearsky", "train", "--config",
                                         str(bad), "--out", str(tmp_path / "o")])
        with pytest.raises(SystemExit) as e:
            main()
        assert e.value.code == 2

    def test_missing_data_exits_1(self, tmp_path, monkeypatch):
        from clearsky.cli import main
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"tasks": [
            {"kind": "haze", "train_dir": str(tmp_path / "none"),
             "test_dir": str(tmp_path / "none")}]}))
        monkeypatch.setattr("sys.argv", ["clearsky", "train", "--config",
                                         str(cfg), "--out", str(tmp_path / "o")])
        with pytest.raises(SystemExit) as e:
            main()
        assert e.value.code == 1
