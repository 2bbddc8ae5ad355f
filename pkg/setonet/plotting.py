"""
绘图模块
损失曲线（多种子均值 ± 1 标准差带，log10 空间，不平滑）与传感器数量消融图
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .models import MetricsRecord  # noqa: E402

logger = logging.getLogger(__name__)

METRICS = ("rel_l2", "test_mse", "train_loss")


def log_bands(
    trajectories: Sequence[Sequence[MetricsRecord]], metric: str = "rel_l2"
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """各种子轨迹在 log10 空间的逐步均值与总体标准差

    Args:
        trajectories: 每个种子一条评估记录序列，步数必须一致
        metric: rel_l2 / test_mse / train_loss

    Returns:
        (步数, log10 均值, log10 标准差)

    Raises:
        ValueError: 没有轨迹、步数不一致或指标非正
    """
    if metric not in METRICS:
        raise ValueError(f"未知的指标: {metric}")
    if not trajectories:
        raise ValueError("至少需要一条轨迹")

    steps = np.array([r.step for r in trajectories[0]])
    for traj in trajectories[1:]:
        if not np.array_equal(steps, [r.step for r in traj]):
            raise ValueError("各种子的评估步数不一致")

    values = np.array(
        [[getattr(r, metric) for r in traj] for traj in trajectories], dtype=np.float64
    )
    if np.any(~(values > 0)):
        raise ValueError("对数坐标要求指标为正")
    logs = np.log10(values)
    return steps, logs.mean(axis=0), logs.std(axis=0)


def plot_loss_history(
    curves: Dict[str, Sequence[Sequence[MetricsRecord]]],
    filepath: str,
    metric: str = "rel_l2",
    title: Optional[str] = None,
) -> str:
    """绘制多条曲线，每条为多种子的均值与 ±1 标准差带"""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, trajectories in curves.items():
        steps, mean, std = log_bands(trajectories, metric)
        line = ax.plot(steps, 10**mean, lw=1.5, label=label)[0]
        ax.fill_between(steps, 10 ** (mean - std), 10 ** (mean + std), color=line.get_color(), alpha=0.25)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel(metric)
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(filepath, dpi=150)
    plt.close(fig)
    logger.info("损失曲线已保存: %s", filepath)
    return filepath


def plot_ablation(
    rows_by_model: Dict[str, List[Dict]],
    filepath: str,
    train_count: Optional[int] = None,
) -> str:
    """传感器数量消融：横轴为传感器数，纵轴为测试 MSE（对数），误差棒为种子标准差"""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for label, rows in rows_by_model.items():
        counts = np.array([r["count"] for r in rows])
        mean = np.array([r["mse_mean"] for r in rows])
        std = np.array([r["mse_std"] for r in rows])
        ax.errorbar(counts, mean, yerr=std, marker="o", capsize=3, label=label)
    if train_count is not None:
        ax.axvline(train_count, color="gray", ls="--", lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("sensors M")
    ax.set_ylabel("test MSE")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(filepath, dpi=150)
    plt.close(fig)
    logger.info("消融图已保存: %s", filepath)
    return filepath
