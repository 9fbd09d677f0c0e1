import json

import pytest
import yaml

from regionprompt import cli


@pytest.fixture
def config_path(tmp_path):
    cfg = {
        "run": {"epochs": 1, "batch_size": 16, "seed": 0,
                "loss": {"variant": "dual"}},
        "dataset": {"kind": "synth", "seed": 21, "n": 16},
        "val_dataset": {"kind": "synth", "seed": 22, "n": 8, "split": "val"},
    }
    p = tmp_path / "config.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return p


def run_train(config_path, tmp_path):
    run_dir = tmp_path / "run"
    rc = cli.main(["train", "--config", str(config_path), "--run-dir", str(run_dir)])
    assert rc == 0
    return run_dir


class TestTrainCommand:
    def test_writes_checkpoint_and_report(self, config_path, tmp_path, capsys):
        run_dir = run_train(config_path, tmp_path)
        assert (run_dir / "final.pt").exists()
        assert (run_dir / "config.json").exists()
        report = json.loads((run_dir / "eval_report.json").read_text())
        assert "p_at_1_im2txt" in report
        out = capsys.readouterr().out
        assert "checkpoint at" in out and "P@1" in out


class TestEvaluateCommand:
    def test_reads_checkpoint(self, config_path, tmp_path, capsys):
        run_dir = run_train(config_path, tmp_path)
        capsys.readouterr()
        out_dir = tmp_path / "eval"
        rc = cli.main(["evaluate", "--checkpoint", str(run_dir / "final.pt"),
                       "--split", "val", "--config", str(config_path),
                       "--run-dir", str(out_dir)])
        assert rc == 0
        report = json.loads((out_dir / "eval_report.json").read_text())
        assert report["metadata"]["checkpoint"].endswith("final.pt")

    def test_defaults_to_synth_val_without_config(self, config_path, tmp_path, capsys):
        run_dir = run_train(config_path, tmp_path)
        capsys.readouterr()
        rc = cli.main(["evaluate", "--checkpoint", str(run_dir / "final.pt")])
        assert rc == 0
        assert "P@1" in capsys.readouterr().out


class TestAblateCommand:
    def test_grid_of_two(self, config_path, tmp_path, capsys):
        grid = tmp_path / "grid.yaml"
        grid.write_text(yaml.safe_dump([{}, {"loss.variant": "nonsense"}]))
        out_dir = tmp_path / "ablations"
        rc = cli.main(["ablate", "--config", str(config_path),
                       "--grid", str(grid), "--run-dir", str(out_dir)])
        assert rc == 0
        rows = json.loads((out_dir / "ablation.json").read_text())
        assert len(rows) == 2
        assert rows[0]["report"] is not None and rows[0]["error"] is None
        assert rows[1]["report"] is None and "ValueError" in rows[1]["error"]
        assert "FAILED" in capsys.readouterr().out


class TestGapReportCommand:
    def test_prints_triplet(self, config_path, tmp_path, capsys):
        run_dir = run_train(config_path, tmp_path)
        capsys.readouterr()
        rc = cli.main(["gap-report", "--checkpoint", str(run_dir / "final.pt"),
                       "--config", str(config_path)])
        assert rc == 0
        gaps = json.loads(capsys.readouterr().out)
        assert set(gaps) == {"vis_clue", "vis_inf", "inf_clue"}


class TestParser:
    def test_unknown_command_rejected(self):
        with pytest.raises(SystemExit):
            cli.main(["deploy"])

    def test_train_requires_config(self):
        with pytest.raises(SystemExit):
            cli.main(["train"])

    def test_unknown_dataset_kind(self):
        with pytest.raises(ValueError, match="dataset kind"):
            cli.load_dataset({"kind": "imagenet"})
