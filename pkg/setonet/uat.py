"""
万能逼近构造的数值校验
用理想键映射、值映射、查询令牌、Lagrange 读出与路由矩阵显式拼装 SetONet-Key，
并与扰动后的参考分支-主干网络逐点比较
"""

import logging
from dataclasses import replace
from typing import Callable, Dict, Optional

import numpy as np
import torch
from scipy.spatial.distance import cdist, pdist

from .branch_encoders import encode_positions, mix_function, tsa, weighted_mixing
from .errors import ConfigValidationError, NumericalFailure
from .models import (
    BranchCoefficients,
    IdealConstruction,
    PositionalEncodingConfig,
    ReferenceBranch,
    TrunkBasis,
    VerificationReport,
)
from .trunk import synthesize

logger = logging.getLogger(__name__)

ACTIVATIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
    "softplus": lambda x: np.logaddexp(0.0, x),
}
INVERTIBLE_MIX = {"tanh": np.arctanh}
SCALE_MARGIN = 0.5
MAX_SCALE_DOUBLINGS = 200
CODE_GAP_WARNING = 1e-6


def min_code_gap(codes: np.ndarray) -> float:
    """编码两两间的最小距离，单个编码时为 inf"""
    flat = np.asarray(codes, dtype=np.float64).reshape(-1, 1)
    if len(flat) < 2:
        return float("inf")
    return float(pdist(flat).min())


def random_reference_branch(
    rng: np.random.Generator,
    m: int = 3,
    n: int = 2,
    p: int = 2,
    d_out: int = 2,
    d_x: int = 1,
    d_y: int = 1,
    activation: str = "tanh",
) -> ReferenceBranch:
    """随机参考分支：b_k(g) = Σ_i c_i^k σ(Σ_j ξ_ij^k g(x_j) + θ_i^k)，主干 τ_k(y) = σ(w_k·y + ζ_k)"""
    if activation not in ACTIVATIONS:
        raise ConfigValidationError(f"未知的激活函数: {activation}", field="activation")
    locations = rng.uniform(-1.0, 1.0, size=(m, d_x))
    if d_x == 1:
        locations = np.sort(locations, axis=0)
    return ReferenceBranch(
        locations=locations,
        c=rng.standard_normal((p, n)),
        xi=rng.standard_normal((p, n, m)),
        theta=rng.standard_normal((p, n)),
        routing=np.arange(p) % d_out,
        trunk_w=rng.standard_normal((p, d_y)),
        trunk_b=rng.standard_normal(p),
        d_out=d_out,
        activation=activation,
    )


def perturb_for_distinct_codes(
    branch: ReferenceBranch,
    rng: np.random.Generator,
    magnitude: float = 1e-3,
    max_tries: int = 100,
) -> ReferenceBranch:
    """给 ξ 加独立均匀扰动，直到所有行和 γ̃_i^k 两两不同

    Args:
        branch: 参考分支
        rng: 随机数生成器
        magnitude: 每个元素的扰动幅度
        max_tries: 重试上限

    Returns:
        扰动后的分支，min_code_gap 记录达到的最小编码间距

    Raises:
        ValueError: magnitude 非正
        NumericalFailure: 重试上限内仍有重合编码
    """
    if not magnitude > 0:
        raise ValueError("扰动幅度必须为正")
    for attempt in range(max_tries):
        xi = branch.xi + magnitude * rng.uniform(-1.0, 1.0, size=branch.xi.shape)
        gap = min_code_gap(xi.sum(axis=2))
        if gap > 0:
            logger.debug("扰动第 %d 次成功，最小编码间距 %.3e", attempt + 1, gap)
            return replace(branch, xi=xi, min_code_gap=gap)
    raise NumericalFailure("扰动后编码仍有重合", details={"max_tries": max_tries})


def build_ideal_keys(encodings: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """理想键映射 η_j(z) = Π_{r≠j} ‖z - e_r‖² / ‖e_j - e_r‖²

    Args:
        encodings: (m, d_PE) 传感器位置编码

    Returns:
        把 (N, d_PE) 映射为 (N, m) 的函数，η(e_j) 为第 j 个标准基向量

    Raises:
        ValueError: 编码有重合
    """
    enc = np.asarray(encodings, dtype=np.float64)
    m = len(enc)
    denom = cdist(enc, enc, "sqeuclidean")
    if m > 1 and np.min(denom[~np.eye(m, dtype=bool)]) == 0.0:
        raise ValueError("传感器位置编码有重合，键映射无定义")
    np.fill_diagonal(denom, 1.0)

    def eta(z: np.ndarray) -> np.ndarray:
        d2 = cdist(np.atleast_2d(np.asarray(z, dtype=np.float64)), enc, "sqeuclidean")
        ratio = d2[:, None, :] / denom[None, :, :]
        ratio[:, np.arange(m), np.arange(m)] = 1.0
        return ratio.prod(axis=2)

    return eta


def build_queries_and_scale(branch: ReferenceBranch, mix_fn: str = "tanh"):
    """选取值缩放 λ 与查询令牌 q_{k,i} = √m · a_mix⁻¹(ξ̃_ij^k / (α_m λ))

    λ 从 1 开始加倍，直到 max|ξ̃|/(α_m λ) ≤ 1/2。

    Returns:
        (λ, (pn, m) 查询令牌)

    Raises:
        ConfigValidationError: 混合函数在 0 附近不可逆
        NumericalFailure: 找不到合适的 λ
    """
    if mix_fn not in INVERTIBLE_MIX:
        raise ConfigValidationError(
            f"混合函数 {mix_fn} 的值域内部不含 0，无法构造查询令牌", field="mix_fn"
        )
    m = branch.m
    alpha = 1.0 / m
    peak = float(np.max(np.abs(branch.xi)))
    scale = 1.0
    for _ in range(MAX_SCALE_DOUBLINGS):
        if peak / (alpha * scale) <= SCALE_MARGIN:
            break
        scale *= 2.0
    else:
        raise NumericalFailure("找不到使令牌落入可逆区间的缩放", details={"peak": peak})

    inverse = INVERTIBLE_MIX[mix_fn]
    queries = np.sqrt(m) * inverse(branch.xi / (alpha * scale))
    if not np.all(np.isfinite(queries)):
        raise NumericalFailure("查询令牌出现非有限值", details={"scale": scale})
    return scale, queries.reshape(branch.p * branch.n, m)


def barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    """第二类重心公式的权重 1/Π_{b≠a}(γ_a - γ_b)，按最大模归一"""
    nodes = np.asarray(nodes, dtype=np.float64)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    weights = 1.0 / diff.prod(axis=1)
    return weights / np.max(np.abs(weights))


class LagrangeReadout:
    """令牌读出 ρ(s, c) = Σ_{k,i} L_{k,i}(c) σ(s + θ_i^k) ê_{ℓ(k)}"""

    def __init__(
        self,
        codes: np.ndarray,
        theta: np.ndarray,
        routing: np.ndarray,
        d_out: int,
        activation: str = "tanh",
    ):
        self.codes = np.asarray(codes, dtype=np.float64).reshape(-1)
        self.theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        self.routing = np.asarray(routing).reshape(-1)
        self.d_out = d_out
        self.sigma = ACTIVATIONS[activation]
        self.weights = barycentric_weights(self.codes)

    def basis(self, c: np.ndarray) -> np.ndarray:
        """Lagrange 基在 c 处的值 (N, pn)，c 恰为节点时取单位向量"""
        c = np.atleast_1d(np.asarray(c, dtype=np.float64))
        diff = c[:, None] - self.codes[None, :]
        exact = diff == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = self.weights[None, :] / diff
            values = terms / terms.sum(axis=1, keepdims=True)
        hit = exact.any(axis=1)
        values[hit] = exact[hit].astype(np.float64)
        return values

    def __call__(self, s: np.ndarray, c: np.ndarray) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        L = self.basis(c)
        act = self.sigma(s[:, None] + self.theta[None, :])
        route = np.eye(self.d_out)[self.routing]  # (pn, d_out)
        return (L * act) @ route


def build_lagrange_readout(
    codes: np.ndarray,
    theta: np.ndarray,
    routing: np.ndarray,
    d_out: int,
    activation: str = "tanh",
) -> LagrangeReadout:
    """构造重心形式的 Lagrange 读出

    Args:
        codes: (pn,) 编码 γ̃
        theta: (pn,) 偏置 θ
        routing: (pn,) 每个节点对应的输出分量 ℓ(k)
        d_out: 输出维度

    Raises:
        ValueError: 编码有重合
    """
    gap = min_code_gap(codes)
    if gap == 0.0:
        raise ValueError("编码有重合，Lagrange 插值无定义")
    if gap < CODE_GAP_WARNING:
        logger.warning("编码最小间距 %.3e 过小，插值条件数较差", gap)
    return LagrangeReadout(codes, theta, routing, d_out, activation)


def routing_matrix(branch: ReferenceBranch) -> np.ndarray:
    """W_{k,(k',i)} = c_i^k δ_{kk'}"""
    p, n = branch.p, branch.n
    W = np.zeros((p, p * n))
    for k in range(p):
        W[k, k * n:(k + 1) * n] = branch.c[k]
    return W


def trunk_basis(branch: ReferenceBranch, y: np.ndarray) -> np.ndarray:
    """主干基 t_k(y) = τ_k(y) ê_{ℓ(k)}，形状 (N_q, p, d_out)"""
    sigma = ACTIVATIONS[branch.activation]
    tau = sigma(np.atleast_2d(y) @ branch.trunk_w.T + branch.trunk_b)
    return tau[:, :, None] * np.eye(branch.d_out)[branch.routing][None, :, :]


def reference_output(branch: ReferenceBranch, g: np.ndarray, y: np.ndarray) -> np.ndarray:
    """参考网络输出 Σ_k b_k(g) τ_k(y) ê_{ℓ(k)}，形状 (N_q, d_out)"""
    sigma = ACTIVATIONS[branch.activation]
    b = (branch.c * sigma(branch.xi @ g + branch.theta)).sum(axis=1)
    return np.einsum("k,qkd->qd", b, trunk_basis(branch, y))


def build_construction(
    branch: ReferenceBranch, mix_fn: str = "tanh", pe_dim: int = 16, pe_max_scale: float = 0.1
) -> IdealConstruction:
    """组装全部理想构造部件"""
    d_x = branch.locations.shape[1]
    pe = PositionalEncodingConfig(embed_dim=pe_dim * d_x, max_scale=pe_max_scale, coordinate_dim=d_x)
    encodings = encode_positions(torch.as_tensor(branch.locations, dtype=torch.float64), pe).numpy()
    eta = build_ideal_keys(encodings)
    scale, queries = build_queries_and_scale(branch, mix_fn)
    codes = branch.codes.reshape(-1)
    return IdealConstruction(
        encodings=encodings,
        keys=eta(encodings),
        scale=scale,
        alpha=1.0 / branch.m,
        queries=queries,
        codes=codes,
        bary_weights=barycentric_weights(codes),
        W=routing_matrix(branch),
        mix_fn=mix_fn,
    )


def assembled_tokens(construction: IdealConstruction, g: np.ndarray) -> np.ndarray:
    """理想令牌矩阵 (pn, 2)：α_m λ a_mix(QKᵀ/√d_k) 作用于值 (λg_j, λ)"""
    m = len(g)
    K = torch.as_tensor(construction.keys, dtype=torch.float64)
    Q = torch.as_tensor(construction.queries, dtype=torch.float64)
    V = torch.as_tensor(
        np.stack((construction.scale * g, np.full(m, construction.scale)), axis=-1),
        dtype=torch.float64,
    )
    mixing = weighted_mixing(mix_function(construction.mix_fn), torch.ones(m, dtype=torch.float64))
    return tsa(Q, K, V, mixing).numpy()


def assembled_output(
    branch: ReferenceBranch,
    construction: IdealConstruction,
    readout: LagrangeReadout,
    g: np.ndarray,
    y: np.ndarray,
) -> np.ndarray:
    """拼装的 SetONet-Key 输出 (N_q, d_out)"""
    tokens = assembled_tokens(construction, g)
    coeffs = construction.W @ readout(tokens[:, 0], tokens[:, 1])
    pred = synthesize(
        BranchCoefficients(
            coeffs=torch.as_tensor(coeffs, dtype=torch.float64),
            bias=torch.zeros(branch.d_out, dtype=torch.float64),
        ),
        TrunkBasis(basis=torch.as_tensor(trunk_basis(branch, y), dtype=torch.float64)),
    )
    return pred.numpy()


def assemble_and_verify(
    branch: ReferenceBranch,
    n_test: int = 100,
    rng: Optional[np.random.Generator] = None,
    n_queries: int = 16,
    tolerance: float = 1e-8,
    mix_fn: str = "tanh",
    strict: bool = False,
) -> VerificationReport:
    """在随机输入上比较拼装网络与参考网络

    输入 g 取自 Uniform[-1,1]^m，第一个测试输入为 g ≡ 0。

    Args:
        branch: 已扰动（编码互异）的参考分支
        n_test: 测试函数个数
        rng: 随机数生成器
        n_queries: 每个测试函数的查询点数
        tolerance: 上确界误差容限
        strict: 为 True 时校验失败抛出异常

    Returns:
        VerificationReport

    Raises:
        NumericalFailure: strict 且误差超过容限
    """
    rng = rng or np.random.default_rng(0)
    construction = build_construction(branch, mix_fn)
    readout = build_lagrange_readout(
        construction.codes,
        branch.theta.reshape(-1),
        np.repeat(branch.routing, branch.n),
        branch.d_out,
        branch.activation,
    )

    d_y = branch.trunk_w.shape[1]
    sup = 0.0
    token_err = 0.0
    for t in range(n_test):
        g = np.zeros(branch.m) if t == 0 else rng.uniform(-1.0, 1.0, size=branch.m)
        y = rng.uniform(-1.0, 1.0, size=(n_queries, d_y))
        expected_tokens = np.stack(
            ((branch.xi @ g).reshape(-1), construction.codes), axis=-1
        )
        token_err = max(token_err, float(np.max(np.abs(assembled_tokens(construction, g) - expected_tokens))))
        diff = assembled_output(branch, construction, readout, g, y) - reference_output(branch, g, y)
        sup = max(sup, float(np.max(np.abs(diff))))

    report = VerificationReport(
        m=branch.m,
        n=branch.n,
        p=branch.p,
        d_out=branch.d_out,
        n_test=n_test,
        min_code_gap=min_code_gap(construction.codes),
        scale=construction.scale,
        sup_discrepancy=sup,
        token_identity_error=token_err,
        tolerance=tolerance,
        passed=bool(sup < tolerance),
    )
    logger.info(
        "UAT 校验: 最小编码间距 %.3e, 上确界误差 %.3e, %s",
        report.min_code_gap, sup, "PASS" if report.passed else "FAIL",
    )
    if strict and not report.passed:
        raise NumericalFailure("构造校验失败", details=report.to_dict())
    return report


def format_report(report: VerificationReport) -> str:
    """结构化文本报告"""
    lines = [
        f"dims: m={report.m} n={report.n} p={report.p} d_out={report.d_out}",
        f"n_test: {report.n_test}",
        f"min_code_gap: {report.min_code_gap:.6e}",
        f"scale: {report.scale:g}",
        f"token_identity_error: {report.token_identity_error:.3e}",
        f"sup_discrepancy: {report.sup_discrepancy:.3e}",
        f"tolerance: {report.tolerance:.1e}",
        f"result: {'PASS' if report.passed else 'FAIL'}",
    ]
    return "\n".join(lines)
