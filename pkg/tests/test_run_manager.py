import pytest

from setonet.config import build_train_config
from setonet.models import MetricsRecord


@pytest.fixture
def cfg():
    return build_train_config("darcy1d", "key", "fixed")[0]


class TestRunManager:
    def test_create_run(self, run_manager, cfg):
        run = run_manager.create_run("darcy1d-key-fixed-seed0", cfg, seed=0)
        assert run.id is not None
        assert run.benchmark == "darcy1d"
        assert run.variant == "key"
        assert run.status == "created"
        assert run.config["lr"] == cfg.lr
        assert run.created_at is not None

    def test_duplicate_name(self, run_manager, cfg):
        run_manager.create_run("same", cfg, seed=0)
        with pytest.raises(ValueError, match="已存在"):
            run_manager.create_run("same", cfg, seed=1)

    def test_get_run_by_name(self, run_manager, cfg):
        created = run_manager.create_run("r", cfg, seed=3)
        assert run_manager.get_run_by_name("r").id == created.id
        assert run_manager.get_run_by_name("missing") is None
        assert run_manager.get_run(9999) is None

    def test_list_runs_filters(self, run_manager, cfg):
        other, _ = build_train_config("darcy1d", "mean", "variable")
        run_manager.create_run("a1", cfg, seed=1)
        run_manager.create_run("a0", cfg, seed=0)
        run_manager.create_run("b0", other, seed=0)

        runs = run_manager.list_runs(benchmark="darcy1d", variant="key")
        assert [r.seed for r in runs] == [0, 1]
        assert len(run_manager.list_runs(protocol="variable")) == 1
        assert len(run_manager.list_runs()) == 3

    def test_update_status(self, run_manager, cfg):
        run = run_manager.create_run("r", cfg, seed=0)
        assert run_manager.update_status(run.id, "running")
        assert run_manager.update_status(run.id, "finished", checkpoint="out/r.pt")
        updated = run_manager.get_run(run.id)
        assert updated.status == "finished"
        assert updated.checkpoint == "out/r.pt"
        assert not run_manager.update_status(9999, "failed")

    def test_update_status_invalid(self, run_manager, cfg):
        run = run_manager.create_run("r", cfg, seed=0)
        with pytest.raises(ValueError, match="未知的运行状态"):
            run_manager.update_status(run.id, "paused")

    def test_delete_cascades_metrics(self, run_manager, metrics_manager, cfg):
        run = run_manager.create_run("r", cfg, seed=0)
        metrics_manager.add_record(run.id, MetricsRecord(step=10, test_mse=0.1, rel_l2=0.2))
        assert run_manager.delete_run(run.id)
        assert metrics_manager.get_record_count(run.id) == 0
        assert run_manager.get_run_count() == 0
        assert not run_manager.delete_run(run.id)

    def test_run_count(self, run_manager, cfg):
        assert run_manager.get_run_count() == 0
        run_manager.create_run("x", cfg, seed=0)
        run_manager.create_run("y", cfg, seed=1)
        assert run_manager.get_run_count() == 2


class TestMetricsManager:
    @pytest.fixture
    def run(self, run_manager, cfg):
        return run_manager.create_run("r", cfg, seed=0)

    def test_add_and_get_ordered(self, metrics_manager, run):
        metrics_manager.add_record(run.id, MetricsRecord(step=200, test_mse=0.2, rel_l2=0.3, seed=0))
        metrics_manager.add_record(run.id, MetricsRecord(step=100, test_mse=0.5, rel_l2=0.6, seed=0, train_loss=0.4))
        records = metrics_manager.get_records(run.id)
        assert [r.step for r in records] == [100, 200]
        assert records[0].train_loss == pytest.approx(0.4)
        assert records[1].train_loss is None

    def test_final_record(self, metrics_manager, run):
        assert metrics_manager.get_final_record(run.id) is None
        for step in (1, 3, 2):
            metrics_manager.add_record(run.id, MetricsRecord(step=step, test_mse=1.0 / step, rel_l2=0.1))
        final = metrics_manager.get_final_record(run.id)
        assert final.step == 3
        assert final.test_mse == pytest.approx(1 / 3)
        assert metrics_manager.get_record_count(run.id) == 3

    def test_negative_metrics_rejected(self, metrics_manager, run):
        with pytest.raises(ValueError, match="指标不能为负数"):
            metrics_manager.add_record(run.id, MetricsRecord(step=1, test_mse=-0.1, rel_l2=0.1))
        with pytest.raises(ValueError, match="步数不能为负"):
            metrics_manager.add_record(run.id, MetricsRecord(step=-1, test_mse=0.1, rel_l2=0.1))

    def test_unknown_run_rejected(self, metrics_manager):
        with pytest.raises(RuntimeError, match="添加评估记录失败"):
            metrics_manager.add_record(4242, MetricsRecord(step=1, test_mse=0.1, rel_l2=0.1))
