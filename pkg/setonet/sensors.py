"""
传感器协议模块
固定布局、可变布局、丢弃替换（drop-off）以及传感器数量消融
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from .models import SensorSet

logger = logging.getLogger(__name__)


def linspace_indices(n_grid: int, M: int) -> np.ndarray:
    """在 n_grid 个网格点中按线性间隔选取 M 个下标

    Raises:
        ValueError: M 超过网格点数
    """
    if M < 1:
        raise ValueError("传感器数量至少为 1")
    if M > n_grid:
        raise ValueError(f"传感器数量 {M} 超过网格分辨率 {n_grid}")
    return np.round(np.linspace(0, n_grid - 1, M)).astype(np.int64)


def sample_fixed_layout(
    low: Sequence[float],
    high: Sequence[float],
    M: int,
    seed: int,
    grid: Optional[np.ndarray] = None,
) -> np.ndarray:
    """固定布局：一次生成，所有样本与批次共用

    Args:
        low: 定义域下界 (d_x,)
        high: 定义域上界 (d_x,)
        M: 传感器数量
        seed: 随机种子
        grid: 若给出 (G, d_x) 网格，则按线性间隔下标取点

    Returns:
        (M, d_x) 位置，一维时升序

    Raises:
        ValueError: M < 1 或超过网格点数
    """
    if M < 1:
        raise ValueError("传感器数量至少为 1")
    if grid is not None:
        grid = np.asarray(grid)
        if grid.ndim == 1:
            grid = grid[:, None]
        return grid[linspace_indices(len(grid), M)].copy()

    rng = np.random.default_rng(seed)
    return resample_variable_layout(low, high, M, rng)


def resample_variable_layout(
    low: Sequence[float], high: Sequence[float], M: int, batch_rng: np.random.Generator
) -> np.ndarray:
    """可变布局：每个批次重新均匀采样，批内共享

    Returns:
        (M, d_x) 位置，一维时升序
    """
    low = np.atleast_1d(np.asarray(low, dtype=np.float64))
    high = np.atleast_1d(np.asarray(high, dtype=np.float64))
    locations = batch_rng.uniform(low, high, size=(M, len(low)))
    if len(low) == 1:
        locations = np.sort(locations, axis=0)
    return locations


def drop_count(M: int, rate: float) -> int:
    """丢弃数量 ⌊rate·M⌋

    Raises:
        ValueError: rate 不在 [0,1) 或会丢弃全部传感器
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"丢弃比例必须位于 [0, 1): {rate}")
    n_drop = int(np.floor(rate * M))
    if n_drop >= M:
        raise ValueError("丢弃比例会移除全部传感器")
    return n_drop


def replace_dropped(
    locations: np.ndarray, dropped: np.ndarray
) -> np.ndarray:
    """为每个被丢弃的位置找到最近的保留传感器

    距离相同时取下标最小的保留传感器。

    Returns:
        长度 M 的来源下标，保留位置指向自身
    """
    M = len(locations)
    source = np.arange(M)
    if len(dropped) == 0:
        return source
    keep = np.setdiff1d(source, dropped)
    dist = cdist(locations[dropped], locations[keep])
    source[dropped] = keep[np.argmin(dist, axis=1)]
    return source


def apply_dropoff(s: SensorSet, rate: float, rng: np.random.Generator) -> SensorSet:
    """均匀丢弃 ⌊rate·M⌋ 个传感器，并用最近保留传感器的 (位置, 取值) 补位

    Args:
        s: 输入传感器集合
        rate: 丢弃比例
        rng: 随机数生成器

    Returns:
        基数不变的新集合
    """
    locations = np.asarray(s.locations)
    values = np.asarray(s.values)
    M = len(locations)
    n_drop = drop_count(M, rate)
    if n_drop == 0:
        return SensorSet(locations.copy(), values.copy())

    dropped = np.sort(rng.choice(M, size=n_drop, replace=False))
    source = replace_dropped(locations, dropped)
    return SensorSet(locations[source], values[source])


def dropoff_batch(
    locations: np.ndarray,
    values: np.ndarray,
    rate: float,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """对批内每个样本独立重抽丢弃掩码

    Args:
        locations: (B, M, d_x)
        values: (B, M, d_u)
    """
    if drop_count(locations.shape[1], rate) == 0:
        return locations, values
    out_loc = np.empty_like(locations)
    out_val = np.empty_like(values)
    for b in range(locations.shape[0]):
        dropped = apply_dropoff(SensorSet(locations[b], values[b]), rate, rng)
        out_loc[b] = dropped.locations
        out_val[b] = dropped.values
    return out_loc, out_val


def shared_dropoff_batch(
    locations: np.ndarray,
    values: np.ndarray,
    rate: float,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """variable 协议：整批只抽一次丢弃集合与补位下标

    补位下标按第一个样本的位置计算，再作用于批内全部样本，
    因而批内样本得到逐位相同的位置。

    Args:
        locations: (B, M, d_x)，批内位置相同
        values: (B, M, d_u)
    """
    M = locations.shape[1]
    n_drop = drop_count(M, rate)
    if n_drop == 0:
        return locations, values
    dropped = np.sort(rng.choice(M, size=n_drop, replace=False))
    source = replace_dropped(np.asarray(locations[0]), dropped)
    return locations[:, source], values[:, source]


def sensor_count_ablation(
    model, dataset, card, counts: Sequence[int], evaluate_fn=None, **eval_kwargs
):
    """传感器数量消融：不重新训练，在不同传感器数量下评估

    Args:
        model: 已训练的算子网络
        dataset: 测试集
        card: 基准卡片
        counts: 传感器数量列表
        evaluate_fn: 评估函数，缺省为 training.evaluate

    Returns:
        行列表，每行包含 count、mse、rel_l2

    Raises:
        ValueError: 数量超过可用的网格分辨率
    """
    # 延迟导入，避免循环依赖
    from .benchmarks import relayout
    from .training import evaluate

    evaluate_fn = evaluate_fn or evaluate
    rows = []
    for count in counts:
        view = relayout(dataset, card, int(count))
        record = evaluate_fn(model, view, card, protocol="fixed", **eval_kwargs)
        rows.append({"count": int(count), "mse": record.test_mse, "rel_l2": record.rel_l2})
        logger.info("传感器数量 %d: MSE=%.4e 相对L2=%.4e", count, record.test_mse, record.rel_l2)
    return rows
