"""
相位屏衍射
周期单位正方形上的高斯相位屏 + 高斯包络，经自由薛定谔方程谱方法传播到 t₀
"""

import numpy as np

from .models import OperatorSample, QueryBatch, SensorSet

GRID_SIZE = 128
N_BUMPS = 10
BUMP_WIDTH = 0.4
ENVELOPE_WIDTH = 0.2
PROPAGATION_TIME = 0.1


def wrap(s: np.ndarray) -> np.ndarray:
    """环面上的最小像位移 s - floor(s + 1/2)"""
    return s - np.floor(s + 0.5)


def periodic_grid(n: int = GRID_SIZE):
    """[0,1)² 上的 n×n 网格（ij 顺序）"""
    axis = np.arange(n) / n
    return np.meshgrid(axis, axis, indexing="ij")


def phase_screen(
    centers: np.ndarray, alphas: np.ndarray, widths: np.ndarray, gx: np.ndarray, gy: np.ndarray
) -> np.ndarray:
    """Φ(x) = Σ α_i exp(-‖wrap(x - x_i)‖² / 2ℓ_i²)"""
    phi = np.zeros_like(gx)
    for (cx, cy), alpha, width in zip(centers, alphas, widths):
        d2 = wrap(gx - cx) ** 2 + wrap(gy - cy) ** 2
        phi += alpha * np.exp(-d2 / (2.0 * width**2))
    return phi


def gaussian_envelope(gx: np.ndarray, gy: np.ndarray, sigma: float = ENVELOPE_WIDTH) -> np.ndarray:
    """以 (½, ½) 为中心的高斯包络"""
    return np.exp(-((gx - 0.5) ** 2 + (gy - 0.5) ** 2) / (2.0 * sigma**2))


def propagate(field0: np.ndarray, t0: float, length: float = 1.0) -> np.ndarray:
    """谱方法传播：傅里叶系数乘以 exp(-i‖ξ‖² t₀ / 2)

    Args:
        field0: (n, n) 复初始场
        t0: 传播时间
        length: 周期长度

    Returns:
        (n, n) 复场；t0 = 0 时原样返回副本
    """
    field0 = np.asarray(field0, dtype=np.complex128)
    if t0 == 0:
        return field0.copy()
    n = field0.shape[0]
    xi = 2 * np.pi * np.fft.fftfreq(n, d=length / n)
    kx, ky = np.meshgrid(xi, xi, indexing="ij")
    phase = np.exp(-0.5j * (kx**2 + ky**2) * t0)
    return np.fft.ifft2(np.fft.fft2(field0) * phase)


def discrete_l2_norm(field: np.ndarray, h: float) -> float:
    return float(np.sqrt(np.sum(np.abs(field) ** 2) * h**2))


def diffraction_sample(
    rng: np.random.Generator,
    M: int = N_BUMPS,
    width: float = BUMP_WIDTH,
    sigma_env: float = ENVELOPE_WIDTH,
    t0: float = PROPAGATION_TIME,
    grid_size: int = GRID_SIZE,
) -> OperatorSample:
    """衍射样本：传感器为相位凸起中心，特征为 [α_i, ℓ_i]；目标为全网格实部/虚部"""
    centers = rng.uniform(0.0, 1.0, size=(M, 2))
    alphas = rng.uniform(-np.pi / 2, np.pi / 2, size=M)
    widths = np.full(M, width)

    gx, gy = periodic_grid(grid_size)
    field0 = gaussian_envelope(gx, gy, sigma_env) * np.exp(
        1j * phase_screen(centers, alphas, widths, gx, gy)
    )
    field = propagate(field0, t0)
    queries = np.stack((gx.ravel(), gy.ravel()), axis=-1)
    targets = np.stack((field.real.ravel(), field.imag.ravel()), axis=-1)
    return OperatorSample(
        sensors=SensorSet(centers, np.stack((alphas, widths), axis=-1)),
        queries=QueryBatch(queries, targets),
        meta={"alphas": alphas},
    )
