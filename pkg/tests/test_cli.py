import csv
import json
from pathlib import Path

import pytest

from retroloop.cli import main

TINY = {
    "version": 1,
    "seeds": [1, 2],
    "dim": 512,
    "world": {
        "n_atoms": 4,
        "n_operators": 2,
        "n_decoys": 2,
        "bb_composites": 3,
        "bb_depth": 1,
    },
    "dataset": {"n_targets": 30, "max_depth": 3, "split": [0.8, 0.1, 0.1], "leaf_prob": 0.3},
    "pretrain": {
        "backward": {"learning_rate": 0.2, "epochs": 6, "batch_size": 64},
        "forward": {"learning_rate": 0.2, "epochs": 6, "batch_size": 64},
    },
    "loop": {
        "iterations": 2,
        "targets_per_iteration": 10,
        "budget": 25,
        "epsilon": 0.5,
        "epsilon_aug": 0.5,
        "k_expand": 8,
        "bc": {"learning_rate": 0.1, "epochs": 3, "batch_size": 64},
    },
    "eval": {"budgets": [10, 25], "estimator": "retro0", "k_expand": 8},
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def tree_bytes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


class TestGenWorld:
    def test_creates_files(self, config_path, tmp_path):
        out = tmp_path / "run"
        assert main(["gen-world", "--config", config_path, "--out", str(out)]) == 0
        for seed in (1, 2):
            assert (out / f"seed_{seed}" / "world.json").exists()
            assert (out / f"seed_{seed}" / "dataset" / "targets.jsonl").exists()
            assert (out / f"seed_{seed}" / "dataset" / "routes.jsonl").exists()

    def test_deterministic_across_directories(self, config_path, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["gen-world", "--config", config_path, "--out", str(a)])
        main(["gen-world", "--config", config_path, "--out", str(b)])
        assert tree_bytes(a) == tree_bytes(b)

    def test_zero_atoms_exits_2(self, tmp_path):
        doc = json.loads(json.dumps(TINY))
        doc["world"]["n_atoms"] = 0
        path = write_config(tmp_path, doc)
        assert main(["gen-world", "--config", path, "--out", str(tmp_path / "x")]) == 2

    def test_unparseable_config_exits_2(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        assert main(["gen-world", "--config", str(path), "--out", str(tmp_path / "x")]) == 2


class TestPretrain:
    def test_backward_equals_reference_checkpoint(self, config_path, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["pretrain", "--config", config_path, "--out", str(out), "--seed", "1"]) == 0
        ck = out / "seed_1" / "checkpoints"
        assert (ck / "backward.json").read_bytes() == (ck / "reference_backward.json").read_bytes()
        assert "top1=" in capsys.readouterr().out

    def test_rerun_is_identical(self, config_path, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            main(["pretrain", "--config", config_path, "--out", str(out), "--seed", "1"])
        assert tree_bytes(a) == tree_bytes(b)

    def test_empty_train_split_exits_3(self, tmp_path):
        doc = json.loads(json.dumps(TINY))
        doc["dataset"] = {"n_targets": 3, "max_depth": 0, "split": [0.8, 0.1, 0.1]}
        path = write_config(tmp_path, doc)
        assert main(["pretrain", "--config", path, "--out", str(tmp_path / "x")]) == 3


class TestSelfImprove:
    def test_requires_checkpoints(self, config_path, tmp_path):
        out = tmp_path / "run"
        main(["gen-world", "--config", config_path, "--out", str(out), "--seed", "1"])
        assert main(["self-improve", "--config", config_path, "--out", str(out), "--seed", "1"]) == 4

    def test_emits_reports_and_checkpoints(self, config_path, tmp_path):
        out = tmp_path / "run"
        main(["pretrain", "--config", config_path, "--out", str(out), "--seed", "1"])
        assert main(["self-improve", "--config", config_path, "--out", str(out), "--seed", "1"]) == 0
        seed_dir = out / "seed_1"
        for i in (1, 2):
            assert (seed_dir / "reports" / f"iteration_{i}.json").exists()
            assert (seed_dir / "checkpoints" / f"backward_iter_{i}.json").exists()
        assert (seed_dir / "checkpoints" / "backward_final.json").exists()
        report = json.loads((seed_dir / "reports" / "iteration_1.json").read_text())
        assert report["routes_attempted"] == 10

    def test_rerun_reproduces_iteration_checkpoints(self, config_path, tmp_path):
        out = tmp_path / "run"
        main(["pretrain", "--config", config_path, "--out", str(out), "--seed", "1"])
        main(["self-improve", "--config", config_path, "--out", str(out), "--seed", "1"])
        ck = out / "seed_1" / "checkpoints"
        first = {p.name: p.read_bytes() for p in ck.glob("backward_iter_*.json")}
        assert first
        main(["self-improve", "--config", config_path, "--out", str(out), "--seed", "1"])
        second = {p.name: p.read_bytes() for p in ck.glob("backward_iter_*.json")}
        assert first == second


class TestEvaluate:
    def test_metrics_files_per_budget(self, config_path, tmp_path):
        out = tmp_path / "run"
        main(["pretrain", "--config", config_path, "--out", str(out), "--seed", "1"])
        main(["self-improve", "--config", config_path, "--out", str(out), "--seed", "1"])
        ck = out / "seed_1" / "checkpoints"
        code = main(
            [
                "evaluate",
                "--config",
                config_path,
                "--out",
                str(out),
                "--seed",
                "1",
                "--checkpoint",
                str(ck / "backward_final.json"),
                "--baseline",
                str(ck / "backward.json"),
            ]
        )
        assert code == 0
        metrics = out / "seed_1" / "metrics"
        for budget in (10, 25):
            for iteration in (0, 2):
                assert (metrics / f"targets_budget{budget}_iter{iteration}.csv").exists()
        with (metrics / "summary.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert {(r["iteration"], r["budget"]) for r in rows} == {
            ("0", "10"),
            ("0", "25"),
            ("2", "10"),
            ("2", "25"),
        }
        with (metrics / "gains.csv").open() as fh:
            gains = list(csv.DictReader(fh))
        row = next(r for r in gains if r["metric"] == "success_rate" and r["budget"] == "25")
        base, ours = float(row["base"]), float(row["ours"])
        if base:
            assert float(row["relative_gain"]) == pytest.approx((ours - base) / base)

    def test_corrupt_checkpoint_exits_5(self, config_path, tmp_path):
        out = tmp_path / "run"
        main(["pretrain", "--config", config_path, "--out", str(out), "--seed", "1"])
        bad = out / "seed_1" / "checkpoints" / "backward_final.json"
        bad.write_text("{]")
        assert (
            main(
                [
                    "evaluate",
                    "--config",
                    config_path,
                    "--out",
                    str(out),
                    "--seed",
                    "1",
                    "--checkpoint",
                    str(bad),
                ]
            )
            == 5
        )


class TestPlan:
    def test_prints_route_in_dependency_order(self, config_path, tmp_path, capsys):
        out = tmp_path / "run"
        main(["pretrain", "--config", config_path, "--out", str(out), "--seed", "1"])
        capsys.readouterr()
        world_doc = json.loads((out / "seed_1" / "world.json").read_text())
        stock = set(world_doc["building_blocks"])
        atoms = world_doc["atoms"]
        op = world_doc["operators"][0]
        target = f"(({atoms[0]}{op}{atoms[1]}){op}{atoms[2]})"
        code = main(
            [
                "plan",
                "--config",
                config_path,
                "--out",
                str(out),
                "--seed",
                "1",
                "--target",
                target,
                "--checkpoint",
                str(out / "seed_1" / "checkpoints" / "backward.json"),
                "--budget",
                "200",
            ]
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[-1].startswith("success ")
        produced = set()
        for line in lines[:-1]:
            head, rest = line.split(" <- ")
            reactants = rest.split("  [")[0].split(" + ")
            for r in reactants:
                assert r in stock or r in produced, f"{r} used before being produced"
            produced.add(head)

    def test_trace_file_has_one_record_per_expansion(self, config_path, tmp_path, capsys):
        out = tmp_path / "run"
        main(["pretrain", "--config", config_path, "--out", str(out), "--seed", "1"])
        capsys.readouterr()
        world_doc = json.loads((out / "seed_1" / "world.json").read_text())
        atoms = world_doc["atoms"]
        op = world_doc["operators"][0]
        trace_path = tmp_path / "trace.jsonl"
        code = main(
            [
                "plan",
                "--config",
                config_path,
                "--out",
                str(out),
                "--seed",
                "1",
                "--target",
                f"({atoms[0]}{op}{atoms[1]})",
                "--checkpoint",
                str(out / "seed_1" / "checkpoints" / "backward.json"),
                "--budget",
                "50",
                "--trace",
                str(trace_path),
            ]
        )
        assert code == 0
        summary = capsys.readouterr().out.strip().splitlines()[-1]
        calls = int(summary.split("calls=")[1].split()[0])
        records = [json.loads(l) for l in trace_path.read_text().splitlines()]
        assert len(records) == calls
        assert all({"step", "molecule", "g_plus_h", "applicable"} <= set(r) for r in records)


class TestReportAndRunAll:
    def test_report_without_manifest_exits_6(self, tmp_path):
        assert main(["report", "--run", str(tmp_path / "empty")]) == 6

    def test_run_all_products_and_determinism(self, config_path, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run-all", "--config", config_path, "--out", str(a)]) == 0
        assert main(["run-all", "--config", config_path, "--out", str(b)]) == 0
        manifest = json.loads((a / "manifest.json").read_text())
        from retroloop.cli import config_hash

        stored = json.loads((a / "config.json").read_text())
        assert manifest["config_hash"] == config_hash(stored)
        for seed, artifacts in manifest["seeds"].items():
            assert Path(artifacts["metrics"]).exists()
            for path in artifacts["checkpoints"].values():
                assert Path(path).exists()
        metrics_a = {
            name: data
            for name, data in tree_bytes(a).items()
            if name.endswith(".csv")
        }
        metrics_b = {
            name: data
            for name, data in tree_bytes(b).items()
            if name.endswith(".csv")
        }
        assert metrics_a == metrics_b
        assert any(name.endswith("aggregated.csv") for name in metrics_a)

    def test_report_aggregates_with_stdev(self, config_path, tmp_path, capsys):
        out = tmp_path / "run"
        main(["run-all", "--config", config_path, "--out", str(out)])
        capsys.readouterr()
        assert main(["report", "--run", str(out)]) == 0
        assert "success=" in capsys.readouterr().out
        with (out / "aggregated.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert all(r["n_seeds"] == "2" for r in rows)

    def test_single_seed_stdev_is_zero(self, tmp_path):
        doc = json.loads(json.dumps(TINY))
        doc["seeds"] = [1]
        path = write_config(tmp_path, doc)
        out = tmp_path / "run"
        main(["run-all", "--config", path, "--out", str(out)])
        with (out / "aggregated.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert rows
        for row in rows:
            assert float(row["success_rate_std"]) == 0.0

    def test_workers_flag_produces_identical_outputs(self, config_path, tmp_path):
        a, b = tmp_path / "w1", tmp_path / "w2"
        main(["run-all", "--config", config_path, "--out", str(a)])
        main(["run-all", "--config", config_path, "--out", str(b), "--workers", "2"])
        csv_a = {n: d for n, d in tree_bytes(a).items() if n.endswith(".csv")}
        csv_b = {n: d for n, d in tree_bytes(b).items() if n.endswith(".csv")}
        assert csv_a == csv_b
