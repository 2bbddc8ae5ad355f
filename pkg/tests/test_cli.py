import json

import pytest

from setonet import cli
from setonet.cli import main
from setonet.database import Database
from setonet.dataset_io import read_metadata
from setonet.run_manager import RunManager

TINY_RUN = [
    "--benchmark", "derivative", "--variant", "key", "--protocol", "fixed",
    "--steps", "4", "--batch", "4", "--eval-every", "2", "--dtype", "float64",
    "--set", "milestones=[1,2]",
    "--set", "card_overrides.M=20",
    "--set", "card_overrides.N_q=16",
    "--set", "card_overrides.test_size=6",
]


@pytest.fixture
def trained(tmp_path, capsys):
    out = tmp_path / "exp"
    code = main(["train", *TINY_RUN, "--seeds", "0", "--out", str(out)])
    assert code == 0
    capsys.readouterr()
    return out


class TestGen:
    def test_gen_prints_checksums(self, tmp_path, capsys):
        out = tmp_path / "data"
        code = main([
            "gen", "--benchmark", "derivative", "--out", str(out),
            "--train-size", "3", "--test-size", "2", "--set", "M=10", "--set", "N_q=8",
        ])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert [line.split(":")[0] for line in lines] == ["train", "test"]
        assert read_metadata(str(out))["splits"]["test"]["n_samples"] == 2

    def test_gen_unknown_card_field(self, tmp_path):
        code = main(["gen", "--benchmark", "darcy1d", "--out", str(tmp_path), "--set", "params.nope=1"])
        assert code == 2

    def test_gen_refuses_overwrite(self, tmp_path):
        argv = ["gen", "--benchmark", "integral", "--out", str(tmp_path), "--train-size", "1", "--test-size", "1"]
        assert main(argv) == 0
        assert main(argv) == 4
        assert main(argv + ["--force"]) == 0


class TestTrain:
    def test_single_seed_outputs(self, trained):
        assert (trained / "runs.db").exists()
        assert (trained / "checkpoints" / "derivative-key-fixed-seed0.pt").exists()
        lines = (trained / "metrics_derivative-key-fixed-seed0.jsonl").read_text(encoding="utf-8").splitlines()
        assert [json.loads(line)["step"] for line in lines] == [2, 4]
        summary = (trained / "summary.csv").read_text(encoding="utf-8-sig").splitlines()
        assert summary[0].startswith("benchmark,variant,protocol")
        assert summary[1].startswith("derivative,key,fixed,")

        db = Database(str(trained / "runs.db"))
        try:
            run = RunManager(db).get_run_by_name("derivative-key-fixed-seed0")
            assert run.status == "finished"
        finally:
            db.close()

    def test_duplicate_run_needs_force(self, trained):
        argv = ["train", *TINY_RUN, "--seeds", "0", "--out", str(trained)]
        assert main(argv) == 2
        assert main(argv + ["--force"]) == 0

    def test_protocol_mismatch(self, tmp_path):
        code = main(["train", "--benchmark", "darcy1d", "--variant", "deeponet", "--protocol", "variable",
                     "--out", str(tmp_path)])
        assert code == 2

    def test_bad_override(self, tmp_path):
        assert main(["train", *TINY_RUN, "--set", "lr=-1", "--out", str(tmp_path)]) == 2


class TestEval:
    def test_eval_prints_metrics(self, trained, capsys):
        checkpoint = str(trained / "checkpoints" / "derivative-key-fixed-seed0.pt")
        assert main(["eval", "--checkpoint", checkpoint, "--protocol", "dropoff", "--drop-rate", "0.1"]) == 0
        result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert result["protocol"] == "dropoff"
        assert result["test_mse"] >= 0
        assert result["rel_l2"] >= 0

    def test_missing_checkpoint(self, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "none.pt")]) == 4

    def test_ablation(self, trained, capsys):
        checkpoint = str(trained / "checkpoints" / "derivative-key-fixed-seed0.pt")
        out = trained / "ablation"
        assert main(["ablate-sensors", "--checkpoints", checkpoint, "--counts", "10", "30", "--out", str(out)]) == 0
        assert (out / "ablation_key.csv").exists()
        assert (out / "ablation.png").exists()
        assert "# key" in capsys.readouterr().out


class TestVerifyAndPlot:
    def test_verify_uat(self, capsys):
        assert main(["verify-uat", "--n-test", "5"]) == 0
        assert "result: PASS" in capsys.readouterr().out

    def test_verify_uat_failure_exit_code(self):
        assert main(["verify-uat", "--n-test", "2", "--tolerance", "0"]) == 3

    def test_plot(self, trained, capsys):
        assert main(["plot", "--out", str(trained)]) == 0
        assert (trained / "loss_rel_l2.png").exists()

    def test_plot_without_runs(self, tmp_path):
        assert main(["plot", "--out", str(tmp_path)]) == 4


class TestUnexpectedErrors:
    def test_unclassified_error_is_logged(self, monkeypatch, caplog):
        def broken(args):
            raise KeyError("input_grid")

        monkeypatch.setitem(cli.COMMANDS, "verify-uat", broken)
        assert main(["verify-uat"]) == 1
        assert "verify-uat" in caplog.text
        assert "KeyError" in caplog.text
