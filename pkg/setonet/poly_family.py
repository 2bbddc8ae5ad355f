"""
导数 / 积分算子数据
f(x) = a x³ + b x² + c x + e sin x，系数服从 Uniform[-0.1, 0.1]
"""

from typing import Iterator, Optional

import numpy as np

from .models import OperatorSample, QueryBatch, SensorSet
from .seeding import sample_rng

TASKS = ("derivative", "integral")
COEFF_RANGE = 0.1


def draw_coefficients(rng: np.random.Generator, n: int) -> np.ndarray:
    """抽取 n 组系数 (a, b, c, e)"""
    return rng.uniform(-COEFF_RANGE, COEFF_RANGE, size=(n, 4))


def poly_value(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """f(x)，coeffs 为 (..., 4)，x 可与其广播"""
    a, b, c, e = (coeffs[..., i : i + 1] for i in range(4))
    return a * x**3 + b * x**2 + c * x + e * np.sin(x)


def poly_derivative(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """f'(x) = 3a x² + 2b x + c + e cos x"""
    a, b, c, e = (coeffs[..., i : i + 1] for i in range(4))
    return 3 * a * x**2 + 2 * b * x + c + e * np.cos(x)


def task_inputs(task: str, coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """传感器取值：导数任务读 f，积分任务读 f'"""
    if task == "derivative":
        return poly_value(coeffs, x)
    if task == "integral":
        return poly_derivative(coeffs, x)
    raise ValueError(f"未知任务: {task}")


def task_targets(task: str, coeffs: np.ndarray, y: np.ndarray) -> np.ndarray:
    """目标：导数任务为 f'，积分任务为 f（积分常数为零）"""
    if task == "derivative":
        return poly_derivative(coeffs, y)
    if task == "integral":
        return poly_value(coeffs, y)
    raise ValueError(f"未知任务: {task}")


def query_grid(n_queries: int = 200, low: float = -1.0, high: float = 1.0) -> np.ndarray:
    return np.linspace(low, high, n_queries)


def gen_poly_family(
    seed: int,
    task: str,
    layout: np.ndarray,
    n_samples: Optional[int] = None,
    n_queries: int = 200,
    split: str = "train",
) -> Iterator[OperatorSample]:
    """生成导数/积分样本流

    Args:
        seed: 主种子
        task: derivative 或 integral
        layout: (M,) 或 (M,1) 传感器位置
        n_samples: 样本数，None 表示无限流
        n_queries: 查询点数
        split: 划分名，用于派生随机数流

    Yields:
        OperatorSample，meta 中包含系数
    """
    if task not in TASKS:
        raise ValueError(f"未知任务: {task}")
    x = np.asarray(layout, dtype=np.float64).reshape(-1)
    y = query_grid(n_queries)
    index = 0
    while n_samples is None or index < n_samples:
        coeffs = draw_coefficients(sample_rng(seed, split, index), 1)[0]
        yield OperatorSample(
            sensors=SensorSet(x[:, None], task_inputs(task, coeffs, x)[:, None]),
            queries=QueryBatch(y[:, None], task_targets(task, coeffs, y)[:, None]),
            meta={"coeffs": coeffs},
        )
        index += 1
