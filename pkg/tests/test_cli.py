import json
import pathlib

import numpy as np
import pytest
from click.testing import CliRunner

from creative_bandit.cli import main

DATA_FILES = ("impressions.csv", "features.jsonl", "ground_truth.csv", "meta.json", "splits.json")


@pytest.fixture()
def runner():
    return CliRunner()


def run_ok(runner, args):
    result = runner.invoke(main, args)
    assert result.exit_code == 0, f"{args} failed: {result.output}\n{result.stderr}"
    return result


def gen_args(out, products=40, seed=0):
    return [
        "generate", "--out", str(out), "--products", str(products),
        "--impressions-per-day", "12", "--days-min", "5", "--days-max", "6",
        "--ctr-scale", "0.12", "--best-worst-ratio", "3.0", "--seed", str(seed),
    ]


@pytest.fixture()
def dataset_dir(tmp_path, runner):
    out = tmp_path / "data"
    run_ok(runner, gen_args(out))
    return out


class TestGenerate:
    def test_writes_all_files(self, runner, tmp_path):
        out = tmp_path / "d"
        result = run_ok(runner, gen_args(out))
        for name in DATA_FILES:
            assert (out / name).exists(), name
        assert "impressions" in result.output

    def test_seed_repeat_is_byte_identical(self, runner, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_ok(runner, gen_args(a, seed=3))
        run_ok(runner, gen_args(b, seed=3))
        for name in DATA_FILES:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_different_seed_differs(self, runner, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_ok(runner, gen_args(a, seed=1))
        run_ok(runner, gen_args(b, seed=2))
        assert (a / "impressions.csv").read_bytes() != (b / "impressions.csv").read_bytes()

    def test_invalid_fractions_exit_2(self, runner, tmp_path):
        result = runner.invoke(
            main, ["generate", "--out", str(tmp_path / "x"), "--split", "0.9,0.9,0.9"]
        )
        assert result.exit_code == 2
        err = json.loads(result.stderr)
        assert err["error"] == "ValueError"

    def test_mushroom_kind(self, runner, tmp_path):
        out = tmp_path / "m"
        run_ok(runner, ["generate", "--kind", "mushroom", "--out", str(out),
                        "--records", "500", "--seed", "1"])
        lines = (out / "mushroom.data").read_text().strip().splitlines()
        assert len(lines) == 500

    def test_config_file_with_flag_override(self, runner, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"products": 7, "seed": 9}), encoding="utf-8")
        out = tmp_path / "d"
        run_ok(runner, ["generate", "--config", str(config), "--out", str(out),
                        "--products", "5"])
        splits = json.loads((out / "splits.json").read_text())
        total = sum(len(v) for v in splits.values())
        assert total == 5  # flag wins over config


class TestTrainPrior:
    def test_gamma_sweep_writes_five_files(self, runner, dataset_dir, tmp_path):
        out = tmp_path / "prior"
        run_ok(runner, ["train-prior", "--data", str(dataset_dir), "--out", str(out),
                        "--gamma", "0,0.1,0.5,1.0,2.0", "--epochs", "2"])
        weight_files = sorted(p.name for p in out.glob("weights_gamma_*.json"))
        assert len(weight_files) == 5
        assert len(list(out.glob("loss_trace_gamma_*.csv"))) == 5

    def test_zero_epochs_persists_initialization(self, runner, dataset_dir, tmp_path):
        out = tmp_path / "prior"
        run_ok(runner, ["train-prior", "--data", str(dataset_dir), "--out", str(out),
                        "--epochs", "0"])
        doc = json.loads((out / "weights.json").read_text())
        assert doc["w"] == [0.0] * doc["d"]

    def test_missing_data_exit_2(self, runner, tmp_path):
        result = runner.invoke(
            main, ["train-prior", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]
        )
        assert result.exit_code == 2
        assert json.loads(result.stderr)["error"] in ("FileNotFoundError", "ParseError")

    def test_divergence_exit_3(self, runner, dataset_dir, tmp_path):
        result = runner.invoke(
            main,
            ["train-prior", "--data", str(dataset_dir), "--out", str(tmp_path / "o"),
             "--learning-rate", "1e12", "--epochs", "5"],
        )
        assert result.exit_code == 3
        assert json.loads(result.stderr)["error"] == "NonFiniteLoss"

    def test_loss_trace_has_epoch_rows(self, runner, dataset_dir, tmp_path):
        out = tmp_path / "prior"
        run_ok(runner, ["train-prior", "--data", str(dataset_dir), "--out", str(out),
                        "--epochs", "3"])
        lines = (out / "loss_trace.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,listwise,pointwise,combined"
        assert len(lines) == 1 + 4  # header + init + 3 epochs


class TestReplay:
    def test_runs_and_aggregate(self, runner, dataset_dir, tmp_path):
        out = tmp_path / "replay"
        run_ok(runner, ["replay", "--data", str(dataset_dir), "--out", str(out),
                        "--policy", "uniform,epsilon_greedy,lin_thompson",
                        "--seeds", "0,1"])
        for policy in ("uniform", "epsilon_greedy", "lin_thompson"):
            for seed in ("0", "1"):
                run_dir = out / "runs" / policy / seed
                assert (run_dir / "report.json").exists()
                assert (run_dir / "curves.csv").exists()
                assert (run_dir / "shares.csv").exists()
        lines = (out / "aggregate.csv").read_text().strip().splitlines()
        assert lines[0] == "policy,sctr_mean,sctr_se,regret_norm"
        assert len(lines) == 4
        uniform_row = lines[1].split(",")
        assert uniform_row[0] == "uniform"
        assert float(uniform_row[3]) == pytest.approx(100.0)

    def test_uniform_added_when_missing(self, runner, dataset_dir, tmp_path):
        out = tmp_path / "replay"
        run_ok(runner, ["replay", "--data", str(dataset_dir), "--out", str(out),
                        "--policy", "epsilon_greedy", "--seed", "0"])
        assert (out / "runs" / "uniform" / "0" / "report.json").exists()

    def test_byte_identical_rerun(self, runner, dataset_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["replay", "--data", str(dataset_dir), "--policy", "uniform,lin_thompson",
                "--seeds", "0,1"]
        run_ok(runner, args + ["--out", str(a)])
        run_ok(runner, args + ["--out", str(b)])
        assert (a / "aggregate.csv").read_bytes() == (b / "aggregate.csv").read_bytes()

    def test_workers_match_sequential(self, runner, dataset_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["replay", "--data", str(dataset_dir), "--policy", "uniform,epsilon_greedy",
                "--seeds", "0,1"]
        run_ok(runner, args + ["--out", str(a), "--workers", "1"])
        run_ok(runner, args + ["--out", str(b), "--workers", "2"])
        assert (a / "aggregate.csv").read_bytes() == (b / "aggregate.csv").read_bytes()

    def test_warmup_requires_weights(self, runner, dataset_dir, tmp_path):
        result = runner.invoke(
            main, ["replay", "--data", str(dataset_dir), "--out", str(tmp_path / "o"),
                   "--policy", "hbm+warmup", "--seed", "0"]
        )
        assert result.exit_code == 2

    def test_warmup_pipeline(self, runner, dataset_dir, tmp_path):
        prior_dir = tmp_path / "prior"
        run_ok(runner, ["train-prior", "--data", str(dataset_dir), "--out", str(prior_dir),
                        "--epochs", "3"])
        out = tmp_path / "replay"
        run_ok(runner, ["replay", "--data", str(dataset_dir), "--out", str(out),
                        "--policy", "uniform,hbm+warmup,prior_greedy",
                        "--weights", str(prior_dir / "weights.json"), "--seed", "0"])
        lines = (out / "aggregate.csv").read_text().strip().splitlines()
        assert len(lines) == 4

    def test_unknown_policy_exit_2(self, runner, dataset_dir, tmp_path):
        result = runner.invoke(
            main, ["replay", "--data", str(dataset_dir), "--out", str(tmp_path / "o"),
                   "--policy", "quantum_annealer"]
        )
        assert result.exit_code == 2
        assert json.loads(result.stderr)["error"] == "UnknownPolicyKind"


class TestMushroomCommand:
    def test_traces_and_summary(self, runner, tmp_path):
        data_dir = tmp_path / "m"
        run_ok(runner, ["generate", "--kind", "mushroom", "--out", str(data_dir),
                        "--records", "800", "--seed", "0"])
        out = tmp_path / "out"
        run_ok(runner, ["mushroom", "--data", str(data_dir / "mushroom.data"),
                        "--out", str(out), "--rounds", "600", "--seed", "0",
                        "--policy", "uniform,epsilon_greedy,lin_thompson,hbm"])
        traces = sorted(p.name for p in (out / "traces").iterdir())
        assert len(traces) == 4
        lines = (out / "mushroom_summary.csv").read_text().strip().splitlines()
        assert lines[0] == "policy,final_regret_mean,regret_norm"
        assert len(lines) == 5
        uniform_row = [l for l in lines[1:] if l.startswith("uniform,")][0]
        assert float(uniform_row.split(",")[2]) == pytest.approx(100.0)

    def test_missing_file_exit_2(self, runner, tmp_path):
        result = runner.invoke(
            main, ["mushroom", "--data", str(tmp_path / "nope.data"), "--out", str(tmp_path / "o")]
        )
        assert result.exit_code == 2


class TestReport:
    def test_reaggregates_identically(self, runner, dataset_dir, tmp_path):
        out = tmp_path / "replay"
        run_ok(runner, ["replay", "--data", str(dataset_dir), "--out", str(out),
                        "--policy", "uniform,lin_thompson", "--seeds", "0,1"])
        new_table = tmp_path / "agg2.csv"
        run_ok(runner, ["report", "--runs", str(out), "--out", str(new_table)])
        assert new_table.read_bytes() == (out / "aggregate.csv").read_bytes()

    def test_missing_runs_dir(self, runner, tmp_path):
        result = runner.invoke(
            main, ["report", "--runs", str(tmp_path), "--out", str(tmp_path / "agg.csv")]
        )
        assert result.exit_code == 2
