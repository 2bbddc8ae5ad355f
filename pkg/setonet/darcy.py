"""
一维非线性 Darcy 问题
-(κ(u) u')' = f，κ(u) = 0.2 + u²，齐次 Dirichlet 边界；
强迫项为平方指数核高斯随机场
"""

import logging
from functools import lru_cache
from typing import Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_banded

from .errors import NumericalFailure
from .models import GRFSample

logger = logging.getLogger(__name__)

GRID_POINTS = 501
LENGTH_SCALE = 0.04
VARIANCE = 1.0


def se_kernel(
    x1: np.ndarray, x2: np.ndarray, ell: float = LENGTH_SCALE, sigma2: float = VARIANCE
) -> np.ndarray:
    """平方指数核 σ² exp(-(x-x')² / 2ℓ²)"""
    diff = np.subtract.outer(np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64))
    return sigma2 * np.exp(-(diff**2) / (2.0 * ell**2))


def uniform_grid(n_points: int = GRID_POINTS) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_points)


@lru_cache(maxsize=8)
def _grf_factor(n_points: int, ell: float, sigma2: float) -> np.ndarray:
    grid = uniform_grid(n_points)
    cov = se_kernel(grid, grid, ell, sigma2)
    jitter = 1e-10
    while jitter <= 1e-6 * (1 + 1e-9):
        try:
            factor = cholesky(cov + jitter * np.eye(n_points), lower=True)
            logger.debug("GRF Cholesky 分解成功，jitter=%.0e", jitter)
            return factor
        except LinAlgError:
            jitter *= 10.0
    raise NumericalFailure(
        "协方差矩阵 Cholesky 分解失败", details={"n_points": n_points, "ell": ell}
    )


def sample_grf(
    seed: Union[int, np.random.Generator],
    n_points: int = GRID_POINTS,
    ell: float = LENGTH_SCALE,
    sigma2: float = VARIANCE,
) -> GRFSample:
    """在 [0,1] 均匀网格上抽取零均值高斯随机场

    Args:
        seed: 种子或随机数生成器
        n_points: 网格点数
        ell: 长度尺度 ℓ_x
        sigma2: 方差 σ²

    Returns:
        GRFSample

    Raises:
        NumericalFailure: jitter 升至 1e-6 仍无法分解
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    factor = _grf_factor(int(n_points), float(ell), float(sigma2))
    values = factor @ rng.standard_normal(n_points)
    return GRFSample(grid=uniform_grid(n_points), values=values)


def permeability(u: np.ndarray) -> np.ndarray:
    return 0.2 + u**2


def darcy_residual(u: np.ndarray, f: np.ndarray, h: float) -> np.ndarray:
    """中心通量离散的内部残差

    Args:
        u: 含边界的完整网格解
        f: 强迫项
        h: 网格间距
    """
    kappa = permeability(u)
    k_face = 0.5 * (kappa[1:] + kappa[:-1])
    flux = -k_face * (u[1:] - u[:-1]) / h
    return (flux[1:] - flux[:-1]) / h - f[1:-1]


def _jacobian_bands(u: np.ndarray, h: float) -> np.ndarray:
    """残差对内部未知量的三对角雅可比，按 solve_banded 的 (1,1) 格式存放"""
    kappa = permeability(u)
    k_face = 0.5 * (kappa[1:] + kappa[:-1])
    diff = u[1:] - u[:-1]
    # 通量 F_{i+1/2} 对左右节点的偏导
    d_left = (k_face - u[:-1] * diff) / h
    d_right = -(u[1:] * diff + k_face) / h

    n = len(u) - 2
    ab = np.zeros((3, n))
    ab[1] = (d_left[1:] - d_right[:-1]) / h
    ab[0, 1:] = d_right[1:-1] / h
    ab[2, :-1] = -d_left[1:-1] / h
    return ab


def solve_darcy_1d(
    f: Union[GRFSample, np.ndarray],
    tol: float = 1e-10,
    max_iter: int = 50,
    seed: Optional[int] = None,
) -> np.ndarray:
    """阻尼牛顿法求解离散 Darcy 方程

    Args:
        f: 网格上的强迫项（GRFSample 或数组）
        tol: 残差最大范数容限
        max_iter: 最大迭代次数
        seed: 样本种子，仅用于错误报告

    Returns:
        含边界零值的完整网格解

    Raises:
        NumericalFailure: 达到最大迭代次数仍未收敛
    """
    values = f.values if isinstance(f, GRFSample) else np.asarray(f, dtype=np.float64)
    n_points = len(values)
    if n_points < 3:
        raise ValueError("网格点数至少为 3")
    h = 1.0 / (n_points - 1)
    u = np.zeros(n_points)

    res = darcy_residual(u, values, h)
    res_norm = np.max(np.abs(res))
    for iteration in range(max_iter + 1):
        if res_norm < tol:
            logger.debug("Darcy 牛顿迭代收敛: %d 次, 残差 %.3e", iteration, res_norm)
            return u
        if iteration == max_iter:
            break

        delta = solve_banded((1, 1), _jacobian_bands(u, h), -res)
        step = 1.0
        while True:
            trial = u.copy()
            trial[1:-1] += step * delta
            trial_res = darcy_residual(trial, values, h)
            trial_norm = np.max(np.abs(trial_res))
            if trial_norm < (1.0 - 1e-4 * step) * res_norm or step < 1e-4:
                break
            step *= 0.5
        u, res, res_norm = trial, trial_res, trial_norm

    raise NumericalFailure(
        "Darcy 牛顿迭代未收敛",
        details={"seed": seed, "residual": float(res_norm), "max_iter": max_iter},
    )
