import numpy as np
import pytest

from setonet.models import MetricsRecord
from setonet.plotting import log_bands, plot_ablation, plot_loss_history


def _trajectory(values, steps=(100, 200, 300)):
    return [MetricsRecord(step=s, test_mse=v, rel_l2=v) for s, v in zip(steps, values)]


class TestLogBands:
    def test_mean_and_std_in_log_space(self):
        steps, mean, std = log_bands([_trajectory([1e-1, 1e-2, 1e-3]), _trajectory([1e-3, 1e-2, 1e-1])])
        np.testing.assert_array_equal(steps, [100, 200, 300])
        np.testing.assert_allclose(mean, [-2.0, -2.0, -2.0])
        np.testing.assert_allclose(std, [1.0, 0.0, 1.0])

    def test_single_seed_has_zero_band(self):
        _, mean, std = log_bands([_trajectory([10.0, 1.0, 0.1])], metric="test_mse")
        np.testing.assert_allclose(mean, [1.0, 0.0, -1.0])
        np.testing.assert_array_equal(std, 0.0)

    def test_mismatched_steps(self):
        with pytest.raises(ValueError, match="评估步数不一致"):
            log_bands([_trajectory([1, 1, 1]), _trajectory([1, 1, 1], steps=(100, 200, 400))])

    def test_missing_train_loss_rejected(self):
        with pytest.raises(ValueError, match="对数坐标要求指标为正"):
            log_bands([_trajectory([1, 1, 1])], metric="train_loss")

    def test_empty_and_unknown_metric(self):
        with pytest.raises(ValueError, match="至少需要一条轨迹"):
            log_bands([])
        with pytest.raises(ValueError, match="未知的指标"):
            log_bands([_trajectory([1, 1, 1])], metric="accuracy")


class TestPlots:
    def test_loss_history_written(self, tmp_path):
        path = str(tmp_path / "loss.png")
        curves = {
            "key": [_trajectory([1e-1, 1e-2, 1e-3]), _trajectory([2e-1, 2e-2, 2e-3])],
            "mean": [_trajectory([1e-1, 5e-2, 2e-2])],
        }
        assert plot_loss_history(curves, path, title="darcy1d") == path
        assert (tmp_path / "loss.png").stat().st_size > 0

    def test_ablation_written(self, tmp_path):
        path = str(tmp_path / "ablation.png")
        rows = [
            {"count": c, "mse_mean": 1e-3 * c, "mse_std": 1e-4, "rel_l2_mean": 0.1, "rel_l2_std": 0.0, "n_seeds": 2}
            for c in (10, 50, 100)
        ]
        plot_ablation({"key": rows}, path, train_count=50)
        assert (tmp_path / "ablation.png").exists()
