import json
from pathlib import Path

import numpy as np
import pytest

from graphflow.cli import main
from graphflow.graphs import read_graphs


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "sbm"
    spec = {
        "family": "sbm",
        "min_nodes": 12,
        "max_nodes": 18,
        "count": 20,
        "seed": 8,
        "sbm": {
            "num_communities": [2, 2],
            "community_size": [6, 9],
            "p_intra": 0.4,
            "p_inter": 0.05,
        },
    }
    spec_path = out.parent / "spec.json"
    spec_path.write_text(json.dumps(spec))
    assert main(["dataset", "gen", "--spec", str(spec_path), "--out", str(out)]) == 0
    return out


def train_config(dataset_dir: Path, **train_kw) -> dict:
    train = {
        "epochs": 2,
        "batch_size": 4,
        "lr": 0.001,
        "edge_loss_weight": 5.0,
        "encoding": {"kind": "sinusoidal", "d": 8, "lambda": 1.0},
        "schedule": {"kind": "never"},
        "eval_every": 2,
        "samples_per_eval": 4,
        "seed": 0,
        "policy": {"steps": 10},
        "noise": "uniform",
    }
    train.update(train_kw)
    return {
        "dataset_dir": str(dataset_dir),
        "train": train,
        "model": {"hidden_dim": 16, "num_layers": 1, "num_heads": 2},
    }


class TestDatasetCommand:
    def test_writes_three_files_and_manifest(self, tiny_dataset):
        for name in ("train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"):
            assert (tiny_dataset / name).exists()
        assert len(read_graphs(tiny_dataset / "train.jsonl")) == 16

    def test_rerun_byte_identical(self, tiny_dataset, tmp_path):
        out2 = tmp_path / "again"
        spec_path = tiny_dataset.parent / "spec.json"
        assert main(["dataset", "gen", "--spec", str(spec_path), "--out", str(out2)]) == 0
        for name in ("train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"):
            assert (out2 / name).read_bytes() == (tiny_dataset / name).read_bytes()

    def test_preset_counts(self, tmp_path):
        out = tmp_path / "desk"
        assert main(["dataset", "gen", "--preset", "sbm-desk", "--out", str(out)]) == 0
        assert len(read_graphs(out / "train.jsonl")) == 128
        assert len(read_graphs(out / "val.jsonl")) == 16
        assert len(read_graphs(out / "test.jsonl")) == 16

    def test_invalid_spec_nonzero_exit(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"family": "sbm", "min_nodes": 5, "max_nodes": 4, "count": 1}))
        assert main(["dataset", "gen", "--spec", str(bad), "--out", str(tmp_path / "x")]) != 0


class TestTrainCommand:
    def test_epochs_zero_outputs(self, tiny_dataset, tmp_path):
        cfg = train_config(tiny_dataset, epochs=0, eval_every=50)
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg_path), "--out", str(out), "--quiet"]) == 0
        assert (out / "metrics.csv").read_text().startswith("epoch,loss,validity")
        assert (out / "manifest.json").exists()

    def test_train_and_manifest_rerun_identical(self, tiny_dataset, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(train_config(tiny_dataset)))
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["train", "--config", str(cfg_path), "--out", str(out1), "--quiet"]) == 0
        # rerun from the emitted manifest reproduces the metrics byte-for-byte
        assert main(
            ["train", "--config", str(out1 / "manifest.json"), "--out", str(out2), "--quiet"]
        ) == 0
        assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()

    def test_resume_continues_epochs(self, tiny_dataset, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(train_config(tiny_dataset, epochs=2)))
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg_path), "--out", str(out), "--quiet"]) == 0
        cfg_path.write_text(json.dumps(train_config(tiny_dataset, epochs=4)))
        assert main(
            ["train", "--config", str(cfg_path), "--out", str(out), "--resume", "--quiet"]
        ) == 0
        rows = (out / "metrics.csv").read_text().strip().splitlines()
        epochs = [int(line.split(",")[0]) for line in rows[1:]]
        assert epochs == [2, 4]

    def test_missing_dataset_nonzero_exit(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(train_config(tmp_path / "nope")))
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r"), "--quiet"]) != 0


class TestSampleCommand:
    @pytest.fixture(scope="class")
    def run_dir(self, tiny_dataset, tmp_path_factory):
        out = tmp_path_factory.mktemp("run") / "r"
        cfg_path = out.parent / "cfg.json"
        cfg_path.write_text(json.dumps(train_config(tiny_dataset)))
        assert main(["train", "--config", str(cfg_path), "--out", str(out), "--quiet"]) == 0
        return out

    def test_count_zero_empty_file(self, run_dir, tmp_path):
        out_file = tmp_path / "empty.jsonl"
        ckpt = run_dir / "checkpoint_000002.bin"
        assert main(
            ["sample", "--checkpoint", str(ckpt), "--count", "0", "--out", str(out_file)]
        ) == 0
        assert out_file.read_text() == ""

    def test_seed_determinism(self, run_dir, tmp_path):
        ckpt = run_dir / "checkpoint_000002.bin"
        args = ["sample", "--checkpoint", str(ckpt), "--count", "3", "--nodes", "12",
                "--steps", "10", "--seed", "5"]
        f1, f2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert main(args + ["--out", str(f1)]) == 0
        assert main(args + ["--out", str(f2)]) == 0
        assert f1.read_bytes() == f2.read_bytes()
        assert len(read_graphs(f1)) == 3

    def test_size_file_sampling(self, run_dir, tiny_dataset, tmp_path):
        ckpt = run_dir / "checkpoint_000002.bin"
        out_file = tmp_path / "s.jsonl"
        assert main(
            ["sample", "--checkpoint", str(ckpt), "--count", "4", "--steps", "10",
             "--size-file", str(tiny_dataset / "train.jsonl"), "--out", str(out_file)]
        ) == 0
        sizes = {g.num_nodes for g in read_graphs(out_file)}
        assert sizes <= set(range(12, 19))

    def test_bad_checkpoint_nonzero_exit(self, tmp_path):
        junk = tmp_path / "junk.bin"
        junk.write_bytes(b"nope")
        assert main(
            ["sample", "--checkpoint", str(junk), "--count", "1", "--nodes", "5",
             "--out", str(tmp_path / "o.jsonl")]
        ) != 0


class TestEvalCommand:
    def test_report_written(self, tiny_dataset, tmp_path):
        report = tmp_path / "report.json"
        assert main(
            ["eval", "--generated", str(tiny_dataset / "test.jsonl"),
             "--train", str(tiny_dataset / "train.jsonl"),
             "--test", str(tiny_dataset / "val.jsonl"),
             "--dataset-manifest", str(tiny_dataset / "manifest.json"),
             "--out", str(report)]
        ) == 0
        obj = json.loads(report.read_text())
        assert set(obj) >= {"vun", "ratio", "metric_config", "family"}
        assert 0.0 <= obj["vun"]["validity"] <= 1.0

    def test_missing_family_rejected(self, tiny_dataset, tmp_path):
        assert main(
            ["eval", "--generated", str(tiny_dataset / "test.jsonl"),
             "--train", str(tiny_dataset / "train.jsonl"),
             "--test", str(tiny_dataset / "val.jsonl"),
             "--out", str(tmp_path / "r.json")]
        ) != 0


class TestSweepCommand:
    def test_one_by_one_grid(self, tiny_dataset, tmp_path):
        grid = {
            "dataset_dir": str(tiny_dataset),
            "lambdas": [1.0],
            "schedules": [{"kind": "never"}],
            "epochs": 2,
            "train": train_config(tiny_dataset)["train"],
            "model": {"hidden_dim": 16, "num_layers": 1, "num_heads": 2},
        }
        grid_path = tmp_path / "grid.json"
        grid_path.write_text(json.dumps(grid))
        out = tmp_path / "sweep"
        assert main(["sweep", "--grid", str(grid_path), "--out", str(out)]) == 0
        lines = (out / "sweep_grid.csv").read_text().strip().splitlines()
        assert lines[0] == "lambda,never"
        assert len(lines) == 2

    def test_two_by_two_grid(self, tiny_dataset, tmp_path):
        grid = {
            "dataset_dir": str(tiny_dataset),
            "lambdas": [1.0, 3.0],
            "schedules": [{"kind": "fixed", "chi": 1}, {"kind": "never"}],
            "epochs": 2,
            "train": train_config(tiny_dataset)["train"],
            "model": {"hidden_dim": 16, "num_layers": 1, "num_heads": 2},
        }
        grid_path = tmp_path / "grid.json"
        grid_path.write_text(json.dumps(grid))
        out = tmp_path / "sweep"
        assert main(["sweep", "--grid", str(grid_path), "--out", str(out)]) == 0
        lines = (out / "sweep_grid.csv").read_text().strip().splitlines()
        assert lines[0] == "lambda,chi1,never"
        assert len(lines) == 3
        for line in lines[1:]:
            cells = line.split(",")[1:]
            assert all(c.startswith(("stable(", "broken(")) for c in cells)
        detail = (out / "cells.csv").read_text().strip().splitlines()
        assert len(detail) == 5

    def test_empty_grid_rejected(self, tiny_dataset, tmp_path):
        grid_path = tmp_path / "grid.json"
        grid_path.write_text(json.dumps({"dataset_dir": str(tiny_dataset), "lambdas": [],
                                         "schedules": []}))
        assert main(["sweep", "--grid", str(grid_path), "--out", str(tmp_path / "s")]) != 0
