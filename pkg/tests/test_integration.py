import json

import numpy as np
import pytest

from setonet.cli import main
from setonet.config import build_train_config
from setonet.database import Database
from setonet.dataset_io import read_dataset
from setonet.exporter import SummaryExporter, aggregate_ablation
from setonet.models import MetricsRecord
from setonet.run_manager import RunManager
from setonet.sensors import sensor_count_ablation
from setonet.training import evaluate, load_datasets, train

DARCY_CARD = [
    "--set", "params.grid_points=101",
    "--set", "M=25",
    "--set", "N_q=20",
]
DARCY_RUN = [
    "--benchmark", "darcy1d", "--steps", "3", "--batch", "3", "--eval-every", "3",
    "--set", "milestones=[1,2]",
    "--set", "card_overrides.params.grid_points=101",
    "--set", "card_overrides.M=25",
    "--set", "card_overrides.N_q=20",
]


class TestIntegration:
    """Integration tests for the experiment workflow"""

    def test_generate_train_evaluate_export(self, tmp_path, capsys):
        """
        Flow:
        1. Generate a small Darcy dataset to disk
        2. Train two variants on it for a few steps
        3. Evaluate a checkpoint under the variable protocol
        4. Run the sensor count ablation
        5. Verify the summary table
        """
        data = tmp_path / "data"
        out = tmp_path / "exp"

        # 1. Generate
        assert main(["gen", "--benchmark", "darcy1d", "--out", str(data),
                     "--train-size", "6", "--test-size", "4", *DARCY_CARD]) == 0
        assert len(read_dataset(str(data), "train")) == 6

        # 2. Train
        for variant in ("key", "mean"):
            code = main(["train", *DARCY_RUN, "--variant", variant, "--protocol", "variable",
                         "--data", str(data), "--seeds", "0", "--out", str(out)])
            assert code == 0

        # 3. Evaluate
        checkpoint = out / "checkpoints" / "darcy1d-key-variable-seed0.pt"
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(checkpoint), "--protocol", "variable", "--data", str(data)]) == 0
        result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert np.isfinite(result["test_mse"])

        # 4. Ablation across sensor counts, reading the stored fine grid
        ablation = out / "ablation"
        assert main(["ablate-sensors", "--checkpoints", str(checkpoint), "--data", str(data),
                     "--counts", "11", "25", "51", "--out", str(ablation)]) == 0
        lines = (ablation / "ablation_key.csv").read_text(encoding="utf-8-sig").splitlines()
        assert [line.split(",")[0] for line in lines[1:]] == ["11", "25", "51"]

        # 5. Summary
        summary = (out / "summary.csv").read_text(encoding="utf-8-sig").splitlines()
        assert [row.split(",")[1] for row in summary[1:]] == ["key", "mean"]

    def test_seed_fan_out(self, tmp_path):
        """Several seeds run as child processes sharing one run store"""
        out = tmp_path / "exp"
        code = main(["train", *DARCY_RUN, "--variant", "sum", "--seeds", "0", "1", "--jobs", "2",
                     "--set", "card_overrides.train_size=4", "--set", "card_overrides.test_size=2",
                     "--out", str(out)])
        assert code == 0

        db = Database(str(out / "runs.db"))
        try:
            runs = RunManager(db).list_runs(variant="sum")
            assert [r.seed for r in runs] == [0, 1]
            assert all(r.status == "finished" for r in runs)
            rows = SummaryExporter(db).collect_summary()
        finally:
            db.close()
        assert rows[0]["n_seeds"] == 2
        assert (out / "summary.csv").exists()

    def test_in_process_workflow(self, db, run_manager, metrics_manager):
        """Library-level flow without the command line"""
        cfg, card = build_train_config(
            "integral", "attention", "variable",
            overrides={
                "total_steps": 4, "batch_size": 4, "eval_every": 2, "milestones": [1, 2],
                "dtype": "float64", "card_overrides.M": 15, "card_overrides.N_q": 12,
                "card_overrides.test_size": 5,
            },
        )
        _, test = load_datasets(cfg, card)
        run = run_manager.create_run("integral-attention", cfg, seed=0)
        result = train(cfg, card, test, seed=0, on_record=lambda r: metrics_manager.add_record(run.id, r))
        run_manager.update_status(run.id, "finished")

        assert metrics_manager.get_record_count(run.id) == 2
        rows = SummaryExporter(db).collect_summary("integral")
        assert rows[0]["mse_mean"] == pytest.approx(result.final.test_mse)

        ablation = sensor_count_ablation(result.model, test, card, [5, 15, 40])
        assert [row["count"] for row in ablation] == [5, 15, 40]
        assert all(np.isfinite(row["mse"]) for row in ablation)

    def test_metrics_round_trip_through_store(self, run_manager, metrics_manager):
        """Metrics written during training read back unchanged"""
        cfg, _ = build_train_config("heat")
        run = run_manager.create_run("heat-key-fixed-seed0", cfg, seed=0)
        record = MetricsRecord(step=50, test_mse=1.5e-4, rel_l2=2e-2, wall_clock=3.25, seed=0, train_loss=1e-4)
        metrics_manager.add_record(run.id, record)
        assert metrics_manager.get_final_record(run.id) == record


@pytest.mark.slow
class TestReducedScaleAcceptance:
    """Long training runs, enabled with SETONET_RUN_SLOW=1"""

    @pytest.fixture(scope="class")
    def derivative_key(self):
        cfg, card = build_train_config(
            "derivative", "key", "fixed",
            overrides={"total_steps": 20_000, "milestones": [4_000, 12_000], "seeds": [0]},
        )
        _, test = load_datasets(cfg, card)
        result = train(cfg, card, test, seed=0)
        return result, test, card

    def test_derivative_key_accuracy(self, derivative_key):
        result, _, _ = derivative_key
        assert result.final.rel_l2 < 2e-2

    def test_dropoff_degradation_bounded(self, derivative_key):
        result, test, card = derivative_key
        fixed = evaluate(result.model, test, card, "fixed")
        dropped = evaluate(result.model, test, card, "dropoff", drop_rate=0.2)
        assert dropped.rel_l2 <= 5 * fixed.rel_l2

    def test_sensor_ablation_shape(self):
        """Sum pooling degrades away from the training count, Key does not"""
        per_variant = {}
        for variant in ("sum", "key"):
            per_seed = []
            for seed in range(3):
                cfg, card = build_train_config(
                    "darcy1d", variant, "fixed",
                    overrides={
                        "total_steps": 10_000, "milestones": [4_000, 8_000], "seeds": [seed],
                        "card_overrides.params.grid_points": 1201,
                    },
                )
                train_set, test = load_datasets(cfg, card)
                result = train(cfg, card, test, train_set, seed=seed)
                per_seed.append(sensor_count_ablation(result.model, test, card, [150, 300, 600]))
            per_variant[variant] = {row["count"]: row["mse_mean"] for row in aggregate_ablation(per_seed)}

        total = per_variant["sum"]
        assert total[150] >= 10 * total[300]
        assert total[600] >= 10 * total[300]
        key = per_variant["key"]
        assert key[150] <= 3 * key[300]
        assert key[600] <= 3 * key[300]
