"""
主干网络与合成规则
主干把查询坐标映射为 p 个基向量，预测为 Σ_k b_k ⊙ t_k(y) + b_0
"""

from typing import Optional

import torch
from torch import nn

from .branch_encoders import FeedforwardMap, build_branch, count_parameters
from .models import BranchCoefficients, BranchConfig, TrunkBasis, TrunkConfig


class TrunkNet(nn.Module):
    """主干网络，输入为原始查询坐标（不做位置编码）"""

    def __init__(self, cfg: TrunkConfig, p: int, d_out: int):
        """初始化

        Args:
            cfg: 主干配置
            p: 基函数个数
            d_out: 输出通道数
        """
        super().__init__()
        self.cfg = cfg
        self.p = p
        self.d_out = d_out
        n_out = p * d_out + (d_out if cfg.with_tau0 else 0)
        self.net = FeedforwardMap([cfg.d_y, *cfg.hidden_widths, n_out], cfg.activation)

    def forward(self, points: torch.Tensor) -> TrunkBasis:
        if points.shape[-1] != self.cfg.d_y:
            raise ValueError(
                f"查询点维度不匹配: 期望 {self.cfg.d_y}, 实际 {points.shape[-1]}"
            )
        if not torch.isfinite(points).all():
            raise ValueError("查询点包含非有限值")

        out = self.net(points)
        n_basis = self.p * self.d_out
        basis = out[..., :n_basis].reshape(*points.shape[:-1], self.p, self.d_out)
        tau0 = out[..., n_basis:] if self.cfg.with_tau0 else None
        return TrunkBasis(basis=basis, tau0=tau0)


def synthesize(
    b: BranchCoefficients, t: TrunkBasis, tau0: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """合成预测 Σ_k b_k ⊙ t_k(y) + b_0 (+ τ0(y))

    Args:
        b: 分支系数，coeffs 为 (p, d_out) 或 (B, p, d_out)
        t: 主干基，basis 为 (N_q, p, d_out) 或 (B, N_q, p, d_out)
        tau0: 额外的基项，缺省时使用 t.tau0

    Returns:
        (N_q, d_out) 或 (B, N_q, d_out)

    Raises:
        ValueError: p 或 d_out 不一致
    """
    if b.coeffs.shape[-2:] != t.basis.shape[-2:]:
        raise ValueError(
            f"分支与主干形状不一致: {tuple(b.coeffs.shape[-2:])} vs {tuple(t.basis.shape[-2:])}"
        )
    if b.bias.shape[-1] != b.coeffs.shape[-1]:
        raise ValueError("偏置维度与 d_out 不一致")

    pred = (b.coeffs.unsqueeze(-3) * t.basis).sum(dim=-2) + b.bias.unsqueeze(-2)
    extra = tau0 if tau0 is not None else t.tau0
    if extra is not None:
        pred = pred + extra
    return pred


class OperatorNet(nn.Module):
    """分支 + 主干组成的算子网络"""

    def __init__(self, branch_cfg: BranchConfig, trunk_cfg: TrunkConfig):
        super().__init__()
        self.branch_cfg = branch_cfg
        self.trunk_cfg = trunk_cfg
        self.branch = build_branch(branch_cfg)
        self.trunk = TrunkNet(trunk_cfg, branch_cfg.p, branch_cfg.d_out)

    @property
    def variant(self) -> str:
        return self.branch_cfg.variant

    def forward(
        self,
        locations: torch.Tensor,
        values: torch.Tensor,
        queries: torch.Tensor,
        weights: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        coeffs = self.branch(locations, values, weights)
        return synthesize(coeffs, self.trunk(queries))

    def num_parameters(self) -> int:
        return count_parameters(self)
