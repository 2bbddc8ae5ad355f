"""
熵正则最优传输
在均匀网格上用对数域 Sinkhorn 求解，取重心映射并双线性插值得到位移场
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import logsumexp

from .errors import NumericalFailure
from .models import OperatorSample, QueryBatch, SensorSet

logger = logging.getLogger(__name__)

DOMAIN = (-5.0, 5.0)
GRID_SIZE = 80
SINKHORN_EPS = 5e-2
SINKHORN_MAX_ITER = 2000
SINKHORN_TOL = 1e-6
TARGET_VARIANCE = 0.5


@dataclass
class SinkhornResult:
    """对偶势 f、g（定义在网格上）与收敛信息"""

    f: np.ndarray
    g: np.ndarray
    eps: float
    n_iter: int
    marginal_error: float


def grid_axis(n: int = GRID_SIZE, low: float = DOMAIN[0], high: float = DOMAIN[1]) -> np.ndarray:
    return np.linspace(low, high, n)


def gaussian_density(
    gx: np.ndarray, gy: np.ndarray, mean: np.ndarray, var: np.ndarray
) -> np.ndarray:
    """对角协方差的二维高斯密度"""
    norm = 1.0 / (2 * np.pi * np.sqrt(var[0] * var[1]))
    return norm * np.exp(
        -0.5 * ((gx - mean[0]) ** 2 / var[0] + (gy - mean[1]) ** 2 / var[1])
    )


def grid_measure(density: np.ndarray) -> np.ndarray:
    """网格上的离散概率质量"""
    total = density.sum()
    if not total > 0:
        raise ValueError("密度在网格上的总质量必须为正")
    return density / total


def _c_transform(potential: np.ndarray, axis: np.ndarray, eps: float) -> np.ndarray:
    """LSE_y[(φ(y) - ‖x - y‖²) / ε]，利用平方距离代价按坐标可分

    Args:
        potential: (n, n) 网格上的势 φ
        axis: (n,) 一维坐标
        eps: 正则参数
    """
    c1 = (axis[:, None] - axis[None, :]) ** 2 / eps
    # 先对 y2 求和得到 (y1, x2)，再对 y1 求和得到 (x1, x2)
    inner = logsumexp(potential[:, None, :] / eps - c1[None, :, :], axis=2)
    return logsumexp(inner[None, :, :] - c1[:, :, None], axis=1)


def sinkhorn_log(
    a: np.ndarray,
    b: np.ndarray,
    axis: np.ndarray,
    eps: float = SINKHORN_EPS,
    max_iter: int = SINKHORN_MAX_ITER,
    tol: float = SINKHORN_TOL,
    eps_start: Optional[float] = 1.0,
    warm_iter: int = 100,
) -> SinkhornResult:
    """对数域 Sinkhorn 迭代，可选 ε 退火热启动

    Args:
        a: (n, n) 源测度（和为 1）
        b: (n, n) 目标测度（和为 1）
        axis: (n,) 网格坐标
        eps: 最终正则参数
        max_iter: 迭代预算（含退火阶段）
        tol: 行边缘 L1 误差容限
        eps_start: 退火起点，None 表示不退火
        warm_iter: 每个退火阶段的迭代上限

    Returns:
        SinkhornResult

    Raises:
        NumericalFailure: 迭代预算内未收敛
    """
    log_a = np.log(np.maximum(a, 1e-300))
    log_b = np.log(np.maximum(b, 1e-300))
    f = np.zeros_like(a)
    g = np.zeros_like(b)

    schedule = []
    if eps_start is not None:
        level = eps_start
        while level > eps:
            schedule.append(level)
            level *= 0.5
    schedule.append(eps)

    n_iter = 0
    err = np.inf
    for stage, level in enumerate(schedule):
        final = stage == len(schedule) - 1
        stage_tol = tol if final else 1e-3
        stage_cap = max_iter - n_iter if final else min(warm_iter, max_iter - n_iter)
        tg = _c_transform(g, axis, level)
        for _ in range(stage_cap):
            f = level * (log_a - tg)
            g = level * (log_b - _c_transform(f, axis, level))
            tg = _c_transform(g, axis, level)
            n_iter += 1
            err = float(np.abs(np.exp(f / level + tg) - a).sum())
            if err < stage_tol:
                break
        logger.debug("Sinkhorn 阶段 ε=%.3g: 迭代 %d, 边缘误差 %.3e", level, n_iter, err)

    if not err < tol:
        raise NumericalFailure(
            "Sinkhorn 未在迭代预算内收敛",
            details={"eps": eps, "max_iter": max_iter, "marginal_error": err},
        )
    return SinkhornResult(f=f, g=g, eps=eps, n_iter=n_iter, marginal_error=err)


def coupling_matrix(result: SinkhornResult, axis: np.ndarray) -> np.ndarray:
    """显式构造耦合 P (n², n²)，仅适用于小网格"""
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack((gx.ravel(), gy.ravel()), axis=-1)
    cost = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    return np.exp((result.f.ravel()[:, None] + result.g.ravel()[None, :] - cost) / result.eps)


def marginal_errors(result: SinkhornResult, a: np.ndarray, b: np.ndarray, axis: np.ndarray):
    """行、列边缘的 L1 误差"""
    rows = np.exp(result.f / result.eps + _c_transform(result.g, axis, result.eps))
    cols = np.exp(result.g / result.eps + _c_transform(result.f, axis, result.eps))
    return float(np.abs(rows - a).sum()), float(np.abs(cols - b).sum())


def barycentric_map(result: SinkhornResult, axis: np.ndarray) -> np.ndarray:
    """重心映射 T(x) = Σ_y P(x,y)·y / Σ_y P(x,y)

    Returns:
        (n, n, 2) 网格上的映射
    """
    eps = result.eps
    c1 = (axis[:, None] - axis[None, :]) ** 2 / eps
    g = result.g / eps

    # 第一分量：对 y2 先做 LSE 得 (y1, x2)，再在 y1 上加权平均
    inner = logsumexp(g[:, None, :] - c1[None, :, :], axis=2)
    z = inner[None, :, :] - c1[:, :, None]  # (x1, y1, x2)
    w = np.exp(z - z.max(axis=1, keepdims=True))
    t1 = (w * axis[None, :, None]).sum(axis=1) / w.sum(axis=1)

    # 第二分量：对 y1 先做 LSE 得 (x1, y2)，再在 y2 上加权平均
    inner = logsumexp(g[None, :, :] - c1[:, :, None], axis=1)
    z = inner[:, None, :] - c1[None, :, :]  # (x1, x2, y2)
    w = np.exp(z - z.max(axis=2, keepdims=True))
    t2 = (w * axis[None, None, :]).sum(axis=2) / w.sum(axis=2)

    return np.stack((t1, t2), axis=-1)


def displacement_interpolator(displacement: np.ndarray, axis: np.ndarray):
    """网格位移场的双线性插值器，返回 (K,2) -> (K,2) 的函数"""
    interps = [
        RegularGridInterpolator(
            (axis, axis), displacement[..., c], method="linear", bounds_error=False, fill_value=None
        )
        for c in range(2)
    ]

    def _evaluate(points: np.ndarray) -> np.ndarray:
        return np.stack([interp(points) for interp in interps], axis=-1)

    return _evaluate


def solve_transport(
    source_density: np.ndarray,
    target_density: np.ndarray,
    axis: np.ndarray,
    eps: float = SINKHORN_EPS,
    max_iter: int = SINKHORN_MAX_ITER,
    tol: float = SINKHORN_TOL,
):
    """网格密度之间的熵最优传输，返回 (位移场 (n,n,2), SinkhornResult)"""
    a = grid_measure(source_density)
    b = grid_measure(target_density)
    result = sinkhorn_log(a, b, axis, eps=eps, max_iter=max_iter, tol=tol)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    displacement = barycentric_map(result, axis) - np.stack((gx, gy), axis=-1)
    return displacement, result


def ot_sample(
    rng: np.random.Generator,
    n_inputs: int = 512,
    n_queries: int = 1024,
    grid_size: int = GRID_SIZE,
    eps: float = SINKHORN_EPS,
    max_iter: int = SINKHORN_MAX_ITER,
    tol: float = SINKHORN_TOL,
) -> OperatorSample:
    """最优传输样本

    源密度为两个等权高斯的混合（均值 Uniform[-2,2]²，对角方差 Uniform[0.1,1]），
    目标为 N(0, 0.5·I)；输入为源密度的 512 个样本（单位取值），
    目标为查询点上的位移 T(y) - y。
    """
    means = rng.uniform(-2.0, 2.0, size=(2, 2))
    variances = rng.uniform(0.1, 1.0, size=(2, 2))

    axis = grid_axis(grid_size)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    source = 0.5 * (
        gaussian_density(gx, gy, means[0], variances[0])
        + gaussian_density(gx, gy, means[1], variances[1])
    )
    target = gaussian_density(gx, gy, np.zeros(2), np.full(2, TARGET_VARIANCE))
    displacement, result = solve_transport(source, target, axis, eps, max_iter, tol)

    component = rng.integers(0, 2, size=n_inputs)
    samples = means[component] + np.sqrt(variances[component]) * rng.standard_normal((n_inputs, 2))
    samples = np.clip(samples, DOMAIN[0], DOMAIN[1])
    queries = rng.uniform(DOMAIN[0], DOMAIN[1], size=(n_queries, 2))
    targets = displacement_interpolator(displacement, axis)(queries)

    return OperatorSample(
        sensors=SensorSet(samples, np.ones((n_inputs, 1))),
        queries=QueryBatch(queries, targets),
        meta={
            "means": means,
            "variances": variances,
            "velocity_field": displacement,
            "sinkhorn_iters": result.n_iter,
        },
    )
