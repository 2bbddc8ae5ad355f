"""
格林函数点源场
热传导（软化对数核）与对流扩散（K₀ 核）场的闭式叠加，以及自适应查询点采样
"""

import logging
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import k0, softmax

from .models import OperatorSample, QueryBatch, SensorSet

logger = logging.getLogger(__name__)

HEAT_SOFTENING = 0.1
DIFFUSIVITY = 0.1
VELOCITY = (1.0, 0.0)
NEAR_SOURCE_RADIUS = 1e-3


def heat_field(
    sources: np.ndarray,
    strengths: np.ndarray,
    queries: np.ndarray,
    eps: float = HEAT_SOFTENING,
) -> np.ndarray:
    """u(x) = Σ s_i/(2π) · log √(r² + ε²)

    Args:
        sources: (M, 2) 源位置
        strengths: (M,) 源强度
        queries: (N, 2) 查询点
        eps: 软化参数 ε

    Returns:
        (N,) 温度
    """
    r2 = cdist(np.asarray(queries, dtype=np.float64), np.asarray(sources, dtype=np.float64), "sqeuclidean")
    return (0.5 * np.log(r2 + eps**2)) @ (np.asarray(strengths, dtype=np.float64) / (2 * np.pi))


def heat_laplacian(
    sources: np.ndarray,
    strengths: np.ndarray,
    queries: np.ndarray,
    eps: float = HEAT_SOFTENING,
) -> np.ndarray:
    """软化场的解析拉普拉斯 Σ s_i/(2π) · 2ε²/(r²+ε²)²"""
    r2 = cdist(np.asarray(queries, dtype=np.float64), np.asarray(sources, dtype=np.float64), "sqeuclidean")
    return (2 * eps**2 / (r2 + eps**2) ** 2) @ (np.asarray(strengths) / (2 * np.pi))


def advdiff_green(
    offsets: np.ndarray,
    diffusivity: float = DIFFUSIVITY,
    velocity: Sequence[float] = VELOCITY,
    r_min: float = NEAR_SOURCE_RADIUS,
) -> np.ndarray:
    """对流扩散格林函数 (1/2πd) exp(v·r/2d) K₀(|v||r|/2d)

    |r| 在 r_min 处截断；v = 0 时退化为 -log|r| / (2πd)。

    Args:
        offsets: (..., 2) 相对源的位移 r
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    v = np.asarray(velocity, dtype=np.float64)
    r = np.maximum(np.linalg.norm(offsets, axis=-1), r_min)
    speed = np.linalg.norm(v)
    if speed == 0.0:
        return -np.log(r) / (2 * np.pi * diffusivity)
    drift = np.exp(offsets @ v / (2 * diffusivity))
    return drift * k0(speed * r / (2 * diffusivity)) / (2 * np.pi * diffusivity)


def advdiff_field(
    sources: np.ndarray,
    strengths: np.ndarray,
    queries: np.ndarray,
    diffusivity: float = DIFFUSIVITY,
    velocity: Sequence[float] = VELOCITY,
) -> np.ndarray:
    """u(x) = Σ s_i g(x - x_i)"""
    offsets = np.asarray(queries)[:, None, :] - np.asarray(sources)[None, :, :]
    return advdiff_green(offsets, diffusivity, velocity) @ np.asarray(strengths, dtype=np.float64)


def square_grid(n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """n×n 均匀网格点，按 ij 顺序展平为 (n², 2)"""
    axis = np.linspace(low, high, n)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    return np.stack((gx.ravel(), gy.ravel()), axis=-1)


def proposal_probabilities(
    field_values: np.ndarray, beta: float, available: np.ndarray
) -> np.ndarray:
    """提议网格上的采样概率 ∝ exp(β·m)，m 为最小-最大归一化的场幅值"""
    magnitude = np.abs(field_values)
    span = magnitude.max() - magnitude.min()
    m = (magnitude - magnitude.min()) / span if span > 0 else np.zeros_like(magnitude)
    return softmax(beta * m[available])


def adaptive_query_sample(
    coarse_field_fn: Callable[[np.ndarray], np.ndarray],
    N_q: int,
    beta: float,
    rng: np.random.Generator,
    seed_size: int = 25,
    proposal_size: int = 128,
    low: float = 0.0,
    high: float = 1.0,
) -> np.ndarray:
    """自适应查询点：均匀种子网格 + 按场幅值加权的无放回抽样

    Args:
        coarse_field_fn: 在 (K, 2) 点上计算粗场
        N_q: 总查询点数
        beta: 温度系数 β
        rng: 随机数生成器
        seed_size: 种子网格边长
        proposal_size: 提议网格边长

    Returns:
        (N_q, 2)，前 seed_size² 个为种子网格

    Raises:
        ValueError: N_q 小于种子网格规模或超过可用提议点数
    """
    seed_points = square_grid(seed_size, low, high)
    if N_q < len(seed_points):
        raise ValueError(f"N_q 至少为 {len(seed_points)}")

    proposal = square_grid(proposal_size, low, high)
    overlap = cdist(proposal, seed_points).min(axis=1) < 1e-12
    available = np.flatnonzero(~overlap)
    n_rest = N_q - len(seed_points)
    if n_rest > len(available):
        raise ValueError(f"剩余查询点数 {n_rest} 超过可用提议点数 {len(available)}")
    if n_rest == 0:
        return seed_points

    probs = proposal_probabilities(coarse_field_fn(proposal), beta, available)
    chosen = rng.choice(available, size=n_rest, replace=False, p=probs)
    return np.vstack((seed_points, proposal[chosen]))


def draw_sources(rng: np.random.Generator, M: int, low: float = 0.1, high: float = 1.0):
    """源位置 Uniform([0,1]²)，强度在 [low, high] 上对数均匀（自然对数）"""
    locations = rng.uniform(0.0, 1.0, size=(M, 2))
    strengths = np.exp(rng.uniform(np.log(low), np.log(high), size=M))
    return locations, strengths


def heat_sample(
    rng: np.random.Generator,
    M: int = 10,
    N_q: int = 8192,
    beta: float = 9.0,
    eps: float = HEAT_SOFTENING,
    seed_size: int = 25,
    proposal_size: int = 128,
) -> OperatorSample:
    """热传导样本：源集合为输入，自适应查询点上的温度为目标"""
    sources, strengths = draw_sources(rng, M)

    def field(points: np.ndarray) -> np.ndarray:
        return heat_field(sources, strengths, points, eps)

    queries = adaptive_query_sample(field, N_q, beta, rng, seed_size, proposal_size)
    return OperatorSample(
        sensors=SensorSet(sources, strengths[:, None]),
        queries=QueryBatch(queries, field(queries)[:, None]),
        meta={"strengths": strengths},
    )


def advdiff_sample(
    rng: np.random.Generator,
    M: int = 30,
    N_q: int = 4096,
    beta: float = 4.0,
    diffusivity: float = DIFFUSIVITY,
    velocity: Sequence[float] = VELOCITY,
    seed_size: int = 25,
    proposal_size: int = 128,
) -> OperatorSample:
    """对流扩散样本"""
    sources, strengths = draw_sources(rng, M)

    def field(points: np.ndarray) -> np.ndarray:
        return advdiff_field(sources, strengths, points, diffusivity, velocity)

    queries = adaptive_query_sample(field, N_q, beta, rng, seed_size, proposal_size)
    return OperatorSample(
        sensors=SensorSet(sources, strengths[:, None]),
        queries=QueryBatch(queries, field(queries)[:, None]),
        meta={"strengths": strengths},
    )
