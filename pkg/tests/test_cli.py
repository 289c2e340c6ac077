"""CLI commands, exit codes, config strictness, reproducibility."""

import json
from pathlib import Path

import numpy as np
import pytest

import difnet.cli as cli
from difnet.config import ConfigError, load_config, load_scenario_file, resolve_scenario, RunConfig


def run_cli(*argv) -> int:
    return cli.main(list(argv))


def dir_bytes(root: Path, suffix=".csv"):
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob(f"*{suffix}"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "a"
    code = run_cli(
        "simulate", "--scenario", "linear-cv", "--seed", "7", "--out", str(out)
    )
    assert code == 0
    return out


class TestSimulate:
    def test_writes_all_trajectories(self, sim_dir):
        files = list((sim_dir / "dataset").rglob("traj_*.csv"))
        assert len(files) == 160
        manifest = json.loads((sim_dir / "dataset" / "manifest.json").read_text())
        assert manifest["splits"] == {"train": 100, "cv": 20, "test": 40}

    def test_rerun_is_byte_identical(self, sim_dir, tmp_path):
        out2 = tmp_path / "b"
        assert run_cli(
            "simulate", "--scenario", "linear-cv", "--seed", "7", "--out", str(out2)
        ) == 0
        a = dir_bytes(sim_dir / "dataset")
        b = dir_bytes(out2 / "dataset")
        assert a == b
        assert (sim_dir / "dataset" / "manifest.json").read_bytes() == (
            out2 / "dataset" / "manifest.json"
        ).read_bytes()

    def test_unknown_scenario_exit_1(self, tmp_path, capsys):
        code = run_cli("simulate", "--scenario", "nope", "--out", str(tmp_path))
        assert code == 1
        err = capsys.readouterr().err
        assert "linear-cv" in err and "nonlinear-ct" in err


class TestEvaluate:
    def test_exact_methods_agree(self, sim_dir):
        code = run_cli(
            "evaluate",
            "--scenario", "linear-cv",
            "--seed", "7",
            "--out", str(sim_dir),
            "--methods", "centralized-exact,dif-exact",
        )
        assert code == 0
        report = (sim_dir / "report.csv").read_text().strip().split("\n")
        header = report[0].split(",")
        rows = [dict(zip(header, line.split(","))) for line in report[1:]]
        cen = {
            (r["sensor"], r["step"]): float(r["rmse_position"])
            for r in rows
            if r["method"] == "centralized-exact"
        }
        dec = {
            (r["sensor"], r["step"]): float(r["rmse_position"])
            for r in rows
            if r["method"] == "dif-exact"
        }
        assert cen.keys() == dec.keys() and len(cen) == 200
        for key in cen:
            np.testing.assert_allclose(cen[key], dec[key], rtol=1e-8)
        manifest = json.loads((sim_dir / "report_manifest.json").read_text())
        assert set(manifest["method_fingerprints"]) == {
            "centralized-exact", "dif-exact",
        }

    def test_rerun_byte_identical_reports(self, sim_dir, tmp_path):
        out2 = tmp_path / "r2"
        for out in (sim_dir, out2):
            code = run_cli(
                "evaluate",
                "--scenario", "linear-cv",
                "--seed", "7",
                "--out", str(out),
                "--data", str(sim_dir / "dataset"),
                "--methods", "dif-exact,cumn",
            )
            assert code == 0
        assert (sim_dir / "report.csv").read_bytes() == (out2 / "report.csv").read_bytes()
        assert (sim_dir / "summary.csv").read_bytes() == (out2 / "summary.csv").read_bytes()

    def test_missing_dataset_exit_1(self, tmp_path):
        code = run_cli(
            "evaluate", "--scenario", "linear-cv", "--out", str(tmp_path / "nowhere")
        )
        assert code == 1

    def test_difnet_without_checkpoints_exit_1(self, sim_dir):
        code = run_cli(
            "evaluate",
            "--scenario", "linear-cv",
            "--out", str(sim_dir),
            "--methods", "difnet",
        )
        assert code == 1


class TestTrainCommand:
    def test_zero_epochs_writes_initial_checkpoints(self, tmp_path):
        out = tmp_path / "t"
        assert run_cli(
            "simulate", "--scenario", "linear-cv", "--seed", "3", "--out", str(out)
        ) == 0
        code = run_cli(
            "train", "--scenario", "linear-cv", "--seed", "3", "--out", str(out),
            "--epochs", "0",
        )
        assert code == 0
        for nid in (1, 2, 3, 4):
            assert (out / "checkpoints" / f"node_{nid}.difn").exists()
            assert (out / "checkpoints" / f"node_{nid}.manifest.json").exists()
        loss_lines = (out / "loss_curve.csv").read_text().strip().split("\n")
        assert loss_lines[0] == "epoch,node,train_loss,cv_loss"
        assert len(loss_lines) == 1
        assert (out / "checkpoints" / "best.json").exists()


class TestVerifyCommand:
    def test_verify_passes_on_linear(self, tmp_path, capsys):
        code = run_cli(
            "verify", "--scenario", "linear-cv", "--seed", "2", "--out", str(tmp_path)
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "OK" in out
        lines = (tmp_path / "verify.csv").read_text().strip().split("\n")
        assert lines[0] == "step,check,abs,rel"
        # 50 steps x (2 global + 4 nodes x 2 identity checks + 4 drift rows)
        assert len(lines) == 1 + 50 * 14
        assert "drift.node1" in (tmp_path / "verify.csv").read_text()

    def test_verify_failure_exit_2(self, tmp_path, monkeypatch):
        monkeypatch.setattr(cli, "VERIFY_TOLERANCE", 1e-300)
        code = run_cli(
            "verify", "--scenario", "linear-cv", "--seed", "2", "--out", str(tmp_path)
        )
        assert code == 2


class TestBenchCommand:
    def test_ratio_table(self, sim_dir):
        code = run_cli(
            "bench",
            "--scenario", "linear-cv",
            "--seed", "7",
            "--out", str(sim_dir),
            "--reps", "3",
            "--methods", "dif-exact,cumn",
        )
        assert code == 0
        lines = (sim_dir / "bench.csv").read_text().strip().split("\n")
        header = lines[0].split(",")
        rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
        ref = next(r for r in rows if r["method"] == "dif-exact")
        assert float(ref["ratio_vs_dif_exact"]) == 1.0


class TestConfig:
    def test_unknown_key_suggestion(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("sceanrio: linear-cv\n")
        with pytest.raises(ConfigError, match="scenario"):
            load_config(cfg)

    def test_nested_training_override(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("training:\n  epochs: 3\n  batch_size: 5\n")
        config = load_config(cfg)
        assert config.training.epochs == 3
        assert config.training.batch_size == 5

    def test_unknown_training_key(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("training:\n  epocs: 3\n")
        with pytest.raises(ConfigError, match="epochs"):
            load_config(cfg)

    def test_scenario_file_roundtrip(self, tmp_path):
        text = """
name: mini
motion: {kind: constant-velocity, dt: 1.0, q: 1.0}
steps: 5
x0: [0, 1, 0, 1, 0, 1]
init_mean: [1, 1, 1, 1, 1, 1]
init_cov_scale: 100.0
split_sizes: [2, 1, 1]
sensors:
  - id: 1
    kind: azimuth-speed
    position: [-5000, 0, 0]
    noise_std: [1.0, 15.0]     # degrees, m/s
    transform_rows: [0, 1, 2, 3]
  - id: 2
    kind: linear-selector
    selector_rows: [4, 5]
    noise_std: [100.0, 10.0]
    transform_rows: [4, 5]
jammer:
  std: [1.0, 100.0, 10.0]
  angle_channels: [0]
  betas: {1: 0.5, 2: 0.5}
  selector_rows: {1: [0, 1], 2: [1, 2]}
"""
        path = tmp_path / "scn.yaml"
        path.write_text(text)
        scn = load_scenario_file(path)
        assert scn.name == "mini"
        np.testing.assert_allclose(
            scn.sensors[0].noise_cov[0, 0], (np.pi / 180) ** 2
        )
        np.testing.assert_allclose(scn.jammer.r0[0, 0], (np.pi / 180) ** 2)
        config = RunConfig(scenario=str(path))
        resolved = resolve_scenario(config)
        assert resolved.steps == 5

    def test_scenario_file_unknown_key(self, tmp_path):
        path = tmp_path / "scn.yaml"
        path.write_text("motion: {}\nx0: [0]\ninit_mean: [0]\nsensors: []\njammer: {}\nstepz: 5\n")
        with pytest.raises(ConfigError, match="steps"):
            load_scenario_file(path)


class TestPlots:
    def test_evaluate_with_plots_writes_svg(self, sim_dir):
        code = run_cli(
            "evaluate",
            "--scenario", "linear-cv",
            "--seed", "7",
            "--out", str(sim_dir),
            "--methods", "dif-exact,cumn",
            "--plots",
        )
        assert code == 0
        assert (sim_dir / "rmse_position.svg").exists()
        assert (sim_dir / "rmse_velocity.svg").exists()
