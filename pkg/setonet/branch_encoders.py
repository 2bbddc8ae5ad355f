"""
分支网络模块
把无序传感器集合映射为分支系数 b_k 与偏置 b_0，
包含 Key / Attention / Mean / Sum 变体以及 DeepONet、VIDON 基线
"""

import logging
import math
from typing import Callable, Optional, Sequence

import torch
from torch import nn
from torch.nn import functional as F

from .models import (
    ACTIVATIONS,
    BranchCoefficients,
    BranchConfig,
    PositionalEncodingConfig,
)

logger = logging.getLogger(__name__)

_ACTIVATION_LAYERS = {
    "relu": nn.ReLU,
    "tanh": nn.Tanh,
    "softplus": nn.Softplus,
    "gelu": nn.GELU,
}

WEIGHT_FLOOR = 1e-12


class FeedforwardMap(nn.Sequential):
    """通用多层感知机，隐藏层之后接激活函数，输出层为线性"""

    def __init__(self, widths: Sequence[int], activation: str = "relu"):
        """初始化

        Args:
            widths: 各层宽度 (输入, 隐藏..., 输出)
            activation: 激活函数名称

        Raises:
            ValueError: 宽度非法或激活函数未知
        """
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ValueError(f"网络宽度必须为正且至少两层: {widths}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"未知的激活函数: {activation}")

        layers = []
        for i in range(len(widths) - 2):
            layers.append(nn.Linear(widths[i], widths[i + 1]))
            layers.append(_ACTIVATION_LAYERS[activation]())
        layers.append(nn.Linear(widths[-2], widths[-1]))
        super().__init__(*layers)

        self.widths = widths
        self.activation = activation


def frequency_ladder(cfg: PositionalEncodingConfig) -> torch.Tensor:
    """几何频率阶梯：从 1 到 1/max_scale 共 d_PE/(2·d_x) 个频率"""
    n_freq = cfg.n_frequencies
    if n_freq == 1:
        return torch.ones(1, dtype=torch.float64)
    exponents = torch.arange(n_freq, dtype=torch.float64) / (n_freq - 1)
    return (1.0 / cfg.max_scale) ** exponents


def encode_positions(
    locations: torch.Tensor, cfg: PositionalEncodingConfig
) -> torch.Tensor:
    """正弦位置编码

    每个坐标分量生成 [sin(ω_j x), cos(ω_j x)] 交错排列的通道，再按坐标拼接。

    Args:
        locations: (..., M, d_x) 传感器坐标
        cfg: 位置编码配置

    Returns:
        (..., M, d_PE) 编码

    Raises:
        ValueError: 坐标维度与配置不一致或配置非法
    """
    if cfg.embed_dim <= 0 or cfg.embed_dim % (2 * cfg.coordinate_dim) != 0:
        raise ValueError("d_PE 必须能被 2·d_x 整除")
    if locations.shape[-1] != cfg.coordinate_dim:
        raise ValueError(
            f"坐标维度不匹配: 期望 {cfg.coordinate_dim}, 实际 {locations.shape[-1]}"
        )

    freqs = frequency_ladder(cfg).to(dtype=locations.dtype, device=locations.device)
    # (..., M, d_x, n_freq)
    angles = locations.unsqueeze(-1) * freqs
    pairs = torch.stack((torch.sin(angles), torch.cos(angles)), dim=-1)
    return pairs.reshape(*locations.shape[:-1], cfg.embed_dim)


class PositionalEncoding(nn.Module):
    """位置编码模块（无可训练参数）"""

    def __init__(self, cfg: PositionalEncodingConfig):
        super().__init__()
        self.cfg = cfg

    def forward(self, locations: torch.Tensor) -> torch.Tensor:
        return encode_positions(locations, self.cfg)


def mix_function(name: str) -> Callable[[torch.Tensor], torch.Tensor]:
    """返回逐元素的分数变换 a_mix"""
    if name == "softplus":
        return F.softplus
    if name == "tanh":
        return torch.tanh
    raise ValueError(f"未知的混合函数: {name}")


def softmax_rows(scores: torch.Tensor) -> torch.Tensor:
    return torch.softmax(scores, dim=-1)


def weighted_mixing(
    a_mix: Callable[[torch.Tensor], torch.Tensor], weights: torch.Tensor
) -> Callable[[torch.Tensor], torch.Tensor]:
    """Key 变体的混合规则 A(S)_{k,i} = w_i·a_mix(S_{k,i}) / Σ_j w_j

    Args:
        a_mix: 逐元素分数变换
        weights: (..., M) 非负传感器权重
    """

    def _mix(scores: torch.Tensor) -> torch.Tensor:
        w = weights / weights.sum(dim=-1, keepdim=True)
        return a_mix(scores) * w.unsqueeze(-2)

    return _mix


def tsa(
    Q: torch.Tensor,
    K: torch.Tensor,
    V: torch.Tensor,
    mixing: Callable[[torch.Tensor], torch.Tensor],
) -> torch.Tensor:
    """令牌-传感器聚合 A(QKᵀ/√d_k)·V

    Args:
        Q: (n_pool, d_k) 或 (B, n_pool, d_k) 查询令牌
        K: (..., M, d_k) 键
        V: (..., M, d_v) 值
        mixing: 作用于分数矩阵的逐行映射

    Returns:
        (..., n_pool, d_v)

    Raises:
        ValueError: d_k 不一致或传感器数不一致
    """
    if Q.shape[-1] != K.shape[-1]:
        raise ValueError(f"d_k 不一致: Q 为 {Q.shape[-1]}, K 为 {K.shape[-1]}")
    if K.shape[-2] != V.shape[-2]:
        raise ValueError("K 与 V 的传感器数量不一致")

    scores = torch.matmul(Q, K.transpose(-1, -2)) / math.sqrt(Q.shape[-1])
    return torch.matmul(mixing(scores), V)


def sensor_weights(
    locations: torch.Tensor, low: float = 0.0, high: float = 1.0
) -> torch.Tensor:
    """传感器权重

    一维时为排序后的单元宽度（相邻中点之间，两端截断到区间端点），
    重合位置平分所在单元；二维及以上为均匀权重。统一加 1e-12 下限。

    Args:
        locations: (..., M, d_x)
        low: 一维区间左端点
        high: 一维区间右端点

    Returns:
        (..., M) 权重
    """
    if locations.shape[-1] != 1:
        return torch.ones(locations.shape[:-1], dtype=locations.dtype, device=locations.device)

    x = locations[..., 0]
    xs, order = torch.sort(x, dim=-1, stable=True)
    mids = 0.5 * (xs[..., 1:] + xs[..., :-1])
    lo = torch.full_like(xs[..., :1], low)
    hi = torch.full_like(xs[..., :1], high)
    edges = torch.cat((lo, mids, hi), dim=-1).clamp(min=low, max=high)
    widths_sorted = (edges[..., 1:] - edges[..., :-1]).clamp_min(0.0)
    widths = torch.empty_like(x).scatter_(-1, order, widths_sorted)

    # 重合位置取组内平均，保证置换不变
    same = (x.unsqueeze(-1) == x.unsqueeze(-2)).to(x.dtype)
    widths = torch.matmul(same, widths.unsqueeze(-1)).squeeze(-1) / same.sum(dim=-1)
    return widths + WEIGHT_FLOOR


def _as_batch(locations: torch.Tensor, values: torch.Tensor):
    if locations.dim() == 2:
        return locations.unsqueeze(0), values.unsqueeze(0), True
    return locations, values, False


def _check_sensors(locations: torch.Tensor, values: torch.Tensor) -> None:
    if locations.shape[-2] < 1:
        raise ValueError("传感器集合不能为空")
    if locations.shape[-2] != values.shape[-2]:
        raise ValueError("位置与取值的传感器数量不一致")
    if not torch.isfinite(values).all() or not torch.isfinite(locations).all():
        raise ValueError("传感器数据包含非有限值")


class _BranchBase(nn.Module):
    """分支网络公共部分：偏置 b_0 与输出整形"""

    def __init__(self, cfg: BranchConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.learn_bias:
            self.bias = nn.Parameter(torch.zeros(cfg.d_out))
        else:
            self.register_buffer("bias", torch.zeros(cfg.d_out))

    def _coefficients(self, flat: torch.Tensor, squeeze: bool) -> BranchCoefficients:
        coeffs = flat.reshape(flat.shape[0], self.cfg.p, self.cfg.d_out)
        bias = self.bias.expand(flat.shape[0], self.cfg.d_out)
        if squeeze:
            coeffs, bias = coeffs[0], bias[0]
        return BranchCoefficients(coeffs=coeffs, bias=bias)


class KeyBranch(_BranchBase):
    """SetONet-Key 分支：仅依赖位置的键通路 + 值通路 + 可学习查询令牌"""

    def __init__(self, cfg: BranchConfig):
        super().__init__(cfg)
        self.pe = PositionalEncoding(cfg.pe)
        self.key_net = FeedforwardMap(
            [cfg.pe.embed_dim, *cfg.key_widths, cfg.d_k], cfg.activation
        )
        value_in = cfg.d_u + (cfg.d_x if cfg.augment_values_with_coords else 0)
        self.value_net = FeedforwardMap(
            [value_in, *cfg.value_widths, cfg.d_v], cfg.activation
        )
        self.queries = nn.Parameter(torch.randn(cfg.n_pool, cfg.d_k) * 0.02)
        self.rho_tok = FeedforwardMap(
            [cfg.d_v, *cfg.rho_tok_widths, cfg.d_out], cfg.activation
        )
        # 沿令牌维度的线性投影 n_pool -> p
        self.token_proj = nn.Linear(cfg.n_pool, cfg.p, bias=False)
        self.a_mix = mix_function(cfg.mix_fn)

    def keys_values(self, locations: torch.Tensor, values: torch.Tensor):
        keys = self.key_net(self.pe(locations))
        if self.cfg.augment_values_with_coords:
            values = torch.cat((values, locations), dim=-1)
        return keys, self.value_net(values)

    def tokens(
        self,
        locations: torch.Tensor,
        values: torch.Tensor,
        weights: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """聚合后的令牌矩阵 P (B, n_pool, d_v)"""
        if weights is None:
            weights = sensor_weights(locations, *self.cfg.domain)
        keys, vals = self.keys_values(locations, values)
        return tsa(self.queries, keys, vals, weighted_mixing(self.a_mix, weights))

    def forward(
        self,
        locations: torch.Tensor,
        values: torch.Tensor,
        weights: Optional[torch.Tensor] = None,
    ) -> BranchCoefficients:
        _check_sensors(locations, values)
        locations, values, squeeze = _as_batch(locations, values)
        if weights is not None and weights.dim() == 1:
            weights = weights.unsqueeze(0)

        readout = self.rho_tok(self.tokens(locations, values, weights))
        coeffs = self.token_proj(readout.transpose(-1, -2)).transpose(-1, -2)
        return self._coefficients(coeffs.reshape(coeffs.shape[0], -1), squeeze)


class PooledBranch(_BranchBase):
    """SetONet 分支：共享值网络 v_θ([PE(x), u]) + 注意力/均值/求和池化"""

    def __init__(self, cfg: BranchConfig):
        super().__init__(cfg)
        if cfg.variant not in ("attention", "mean", "sum"):
            raise ValueError(f"池化分支不支持变体: {cfg.variant}")
        self.pool_kind = cfg.variant
        self.pe = PositionalEncoding(cfg.pe)
        self.value_net = FeedforwardMap(
            [cfg.pe.embed_dim + cfg.d_u, *cfg.pooled_value_widths, cfg.d_v],
            cfg.activation,
        )
        pooled_dim = cfg.d_v
        if self.pool_kind == "attention":
            if cfg.d_v % cfg.heads != 0:
                raise ValueError("d_v 必须能被注意力头数整除")
            self.query = nn.Parameter(torch.randn(1, cfg.n_pool, cfg.d_v) * 0.02)
            self.attn = nn.MultiheadAttention(cfg.d_v, cfg.heads, batch_first=True)
            pooled_dim = cfg.n_pool * cfg.d_v
        self.rho = FeedforwardMap(
            [pooled_dim, *cfg.rho_widths, cfg.p * cfg.d_out], cfg.activation
        )

    def sensor_features(self, locations: torch.Tensor, values: torch.Tensor):
        return self.value_net(torch.cat((self.pe(locations), values), dim=-1))

    def attention_weights(self, locations: torch.Tensor, values: torch.Tensor):
        """注意力池化的行 softmax 权重 (B, n_pool, M)，按头平均"""
        feats = self.sensor_features(locations, values)
        query = self.query.expand(feats.shape[0], -1, -1)
        _, attn = self.attn(query, feats, feats, need_weights=True)
        return attn

    def pool(self, locations: torch.Tensor, values: torch.Tensor) -> torch.Tensor:
        """集合级表示 (B, pooled_dim)"""
        feats = self.sensor_features(locations, values)
        if self.pool_kind == "mean":
            return feats.mean(dim=-2)
        if self.pool_kind == "sum":
            return feats.sum(dim=-2)
        query = self.query.expand(feats.shape[0], -1, -1)
        pooled, _ = self.attn(query, feats, feats, need_weights=False)
        return pooled.reshape(pooled.shape[0], -1)

    def forward(
        self,
        locations: torch.Tensor,
        values: torch.Tensor,
        weights: Optional[torch.Tensor] = None,
    ) -> BranchCoefficients:
        _check_sensors(locations, values)
        locations, values, squeeze = _as_batch(locations, values)
        return self._coefficients(self.rho(self.pool(locations, values)), squeeze)


class DeepONetBranch(_BranchBase):
    """DeepONet 基线分支：只读取固定长度的取值向量"""

    def __init__(self, cfg: BranchConfig):
        super().__init__(cfg)
        self.net = FeedforwardMap(
            [cfg.n_sensors * cfg.d_u, *cfg.deeponet_widths, cfg.p * cfg.d_out],
            cfg.activation,
        )

    def forward(
        self,
        locations: Optional[torch.Tensor],
        values: torch.Tensor,
        weights: Optional[torch.Tensor] = None,
    ) -> BranchCoefficients:
        squeeze = values.dim() == 2
        if squeeze:
            values = values.unsqueeze(0)
        if values.shape[-2] != self.cfg.n_sensors:
            raise ValueError(
                f"DeepONet 需要固定的 {self.cfg.n_sensors} 个传感器, 实际为 {values.shape[-2]}"
            )
        if not torch.isfinite(values).all():
            raise ValueError("传感器数据包含非有限值")
        flat = self.net(values.reshape(values.shape[0], -1))
        return self._coefficients(flat, squeeze)


class VidonBranch(_BranchBase):
    """VIDON 基线分支：坐标/取值编码相加，多头打分加权平均"""

    def __init__(self, cfg: BranchConfig):
        super().__init__(cfg)
        enc = cfg.vidon_enc_dim
        self.coord_encoder = FeedforwardMap(
            [cfg.d_x, *cfg.vidon_enc_widths, enc], cfg.activation
        )
        self.value_encoder = FeedforwardMap(
            [cfg.d_u, *cfg.vidon_enc_widths, enc], cfg.activation
        )
        self.score_nets = nn.ModuleList(
            FeedforwardMap([enc, *cfg.vidon_head_widths, 1], cfg.activation)
            for _ in range(cfg.heads)
        )
        self.head_nets = nn.ModuleList(
            FeedforwardMap(
                [enc, *cfg.vidon_head_widths, cfg.vidon_head_dim], cfg.activation
            )
            for _ in range(cfg.heads)
        )
        self.out_net = FeedforwardMap(
            [cfg.heads * cfg.vidon_head_dim, *cfg.vidon_out_widths, cfg.p * cfg.d_out],
            cfg.activation,
        )

    def head_outputs(self, locations: torch.Tensor, values: torch.Tensor):
        """各头输出 (B, H, head_dim)，权重在传感器维度上归一化"""
        z = self.coord_encoder(locations) + self.value_encoder(values)
        outputs = []
        for score_net, head_net in zip(self.score_nets, self.head_nets):
            w = torch.softmax(score_net(z), dim=-2)
            outputs.append((w * head_net(z)).sum(dim=-2))
        return torch.stack(outputs, dim=-2)

    def forward(
        self,
        locations: torch.Tensor,
        values: torch.Tensor,
        weights: Optional[torch.Tensor] = None,
    ) -> BranchCoefficients:
        _check_sensors(locations, values)
        locations, values, squeeze = _as_batch(locations, values)
        heads = self.head_outputs(locations, values)
        flat = self.out_net(heads.reshape(heads.shape[0], -1))
        return self._coefficients(flat, squeeze)


def build_branch(cfg: BranchConfig) -> nn.Module:
    """根据配置构建分支网络

    Raises:
        ValueError: 变体未知
    """
    if cfg.variant == "key":
        return KeyBranch(cfg)
    if cfg.variant in ("attention", "mean", "sum"):
        return PooledBranch(cfg)
    if cfg.variant == "deeponet":
        return DeepONetBranch(cfg)
    if cfg.variant == "vidon":
        return VidonBranch(cfg)
    raise ValueError(f"未知的分支变体: {cfg.variant}")


def count_parameters(module: nn.Module) -> int:
    """可训练参数数量"""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
