"""
数据模型定义
定义传感器集合、配置、数据集与运行记录等数据结构
"""

from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np

VARIANTS = ("key", "attention", "mean", "sum", "deeponet", "vidon")
SET_VARIANTS = ("key", "attention", "mean", "sum", "vidon")
PROTOCOLS = ("fixed", "variable", "dropoff")
MIX_FUNCTIONS = ("softplus", "tanh")
ACTIVATIONS = ("relu", "tanh", "softplus", "gelu")


def _from_dict(cls, data: Dict[str, Any]):
    """按字段名过滤后构造 dataclass"""
    names = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in data.items() if k in names})


@dataclass
class SensorSet:
    """传感器集合：无序的 (位置, 取值) 观测"""

    locations: Any  # M×d_x
    values: Any  # M×d_u
    weights: Any = None  # M，非负

    @property
    def size(self) -> int:
        return int(self.locations.shape[-2])

    def validate(self) -> None:
        """检查形状与权重约束

        Raises:
            ValueError: 集合为空、形状不一致或权重非法
        """
        if self.size < 1:
            raise ValueError("传感器集合不能为空")
        if self.values.shape[-2] != self.size:
            raise ValueError("位置与取值的传感器数量不一致")
        if self.weights is not None:
            w = np.asarray(self.weights)
            if np.any(w < 0) or not np.sum(w) > 0:
                raise ValueError("传感器权重必须非负且总和为正")

    def to_dict(self) -> Dict:
        """转换为字典"""
        return {
            "locations": np.asarray(self.locations).tolist(),
            "values": np.asarray(self.values).tolist(),
            "weights": (
                np.asarray(self.weights).tolist() if self.weights is not None else None
            ),
        }


@dataclass
class QueryBatch:
    """查询点及其真值"""

    points: Any  # N_q×d_y
    targets: Any = None  # N_q×d_out

    def to_dict(self) -> Dict:
        return {
            "points": np.asarray(self.points).tolist(),
            "targets": (
                np.asarray(self.targets).tolist() if self.targets is not None else None
            ),
        }


@dataclass
class BranchCoefficients:
    """分支输出：p 个系数向量与偏置 b_0"""

    coeffs: Any  # (B,) p×d_out
    bias: Any  # (B,) d_out

    @property
    def p(self) -> int:
        return int(self.coeffs.shape[-2])

    @property
    def d_out(self) -> int:
        return int(self.coeffs.shape[-1])


@dataclass
class TrunkBasis:
    """主干输出：每个查询点的 p 个基向量，VIDON 模式附带 τ0"""

    basis: Any  # N_q×p×d_out
    tau0: Any = None  # N_q×d_out


@dataclass
class PositionalEncodingConfig:
    """正弦位置编码配置"""

    embed_dim: int = 64
    max_scale: float = 0.1
    coordinate_dim: int = 1

    @property
    def n_frequencies(self) -> int:
        return self.embed_dim // (2 * self.coordinate_dim)

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "PositionalEncodingConfig":
        return _from_dict(cls, data)


@dataclass
class BranchConfig:
    """分支网络配置"""

    variant: str = "key"
    d_x: int = 1
    d_u: int = 1
    p: int = 32
    d_out: int = 1
    d_k: int = 64
    d_v: int = 32
    n_pool: int = 169
    heads: int = 4
    mix_fn: str = "softplus"
    activation: str = "relu"
    key_widths: List[int] = field(default_factory=lambda: [200])
    value_widths: List[int] = field(default_factory=lambda: [120, 120])
    rho_tok_widths: List[int] = field(default_factory=lambda: [200])
    pooled_value_widths: List[int] = field(default_factory=lambda: [256])
    rho_widths: List[int] = field(default_factory=lambda: [300])
    deeponet_widths: List[int] = field(default_factory=lambda: [128, 128, 128])
    n_sensors: int = 300
    vidon_enc_dim: int = 40
    vidon_enc_widths: List[int] = field(default_factory=lambda: [40, 40, 40])
    vidon_head_widths: List[int] = field(default_factory=lambda: [128, 128, 128])
    vidon_head_dim: int = 64
    vidon_out_widths: List[int] = field(default_factory=lambda: [256, 256])
    augment_values_with_coords: bool = False
    learn_bias: bool = True
    domain: List[float] = field(default_factory=lambda: [-1.0, 1.0])
    pe: PositionalEncodingConfig = field(default_factory=PositionalEncodingConfig)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["pe"] = self.pe.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "BranchConfig":
        data = dict(data)
        if isinstance(data.get("pe"), dict):
            data["pe"] = PositionalEncodingConfig.from_dict(data["pe"])
        return _from_dict(cls, data)


@dataclass
class TrunkConfig:
    """主干网络配置"""

    d_y: int = 1
    hidden_widths: List[int] = field(default_factory=lambda: [256] * 4)
    activation: str = "relu"
    with_tau0: bool = False

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "TrunkConfig":
        return _from_dict(cls, data)


@dataclass
class SensorProtocol:
    """传感器协议"""

    mode: str = "fixed"  # fixed / variable / dropoff
    M: int = 100
    drop_rate: float = 0.2
    stream: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class BenchmarkCard:
    """基准卡片：定义域、维度、规模与生成参数"""

    name: str
    domain_low: List[float]
    domain_high: List[float]
    query_low: List[float]
    query_high: List[float]
    d_x: int
    d_u: int
    d_y: int
    d_out: int
    M: int
    N_q: int
    p: int
    pe_max: float
    mix_fn: str
    key_hidden: int
    rho_hidden: int
    augment_values_with_coords: bool
    protocols: List[str]
    schedule: str  # long / short
    train_size: int
    test_size: int
    point_cloud: bool = False
    params: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "BenchmarkCard":
        return _from_dict(cls, data)


@dataclass
class GRFSample:
    """高斯随机场样本"""

    grid: np.ndarray
    values: np.ndarray


@dataclass
class OperatorSample:
    """单个算子样本：传感器集合、查询批次与元数据"""

    sensors: SensorSet
    queries: QueryBatch
    meta: Dict[str, Any] = field(default_factory=dict)


@dataclass
class OperatorDataset:
    """算子数据集（一个划分）

    locations 与 query_points 的首维为 1 时表示所有样本共享同一布局。
    """

    locations: np.ndarray  # (N|1)×M×d_x
    values: np.ndarray  # N×M×d_u
    query_points: np.ndarray  # (N|1)×N_q×d_y
    targets: np.ndarray  # N×N_q×d_out
    extras: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_sensors(self) -> int:
        return int(self.values.shape[1])

    @property
    def shared_layout(self) -> bool:
        return self.locations.shape[0] == 1 and len(self) != 1

    def locations_for(self, index: np.ndarray) -> np.ndarray:
        if self.locations.shape[0] == 1:
            return np.repeat(self.locations, len(index), axis=0)
        return self.locations[index]

    def queries_for(self, index: np.ndarray) -> np.ndarray:
        if self.query_points.shape[0] == 1:
            return np.repeat(self.query_points, len(index), axis=0)
        return self.query_points[index]

    def subset(self, index: np.ndarray) -> "OperatorDataset":
        """按样本下标取子集"""
        index = np.asarray(index)
        locations = (
            self.locations if self.locations.shape[0] == 1 else self.locations[index]
        )
        queries = (
            self.query_points
            if self.query_points.shape[0] == 1
            else self.query_points[index]
        )
        extras = {
            k: v[index] for k, v in self.extras.items() if v.shape[0] == len(self)
        }
        return OperatorDataset(
            locations=locations,
            values=self.values[index],
            query_points=queries,
            targets=self.targets[index],
            extras=extras,
            metadata=dict(self.metadata),
        )

    def sample(self, i: int) -> OperatorSample:
        idx = np.array([i])
        return OperatorSample(
            sensors=SensorSet(self.locations_for(idx)[0], self.values[i]),
            queries=QueryBatch(self.queries_for(idx)[0], self.targets[i]),
            meta={k: v[i] for k, v in self.extras.items() if v.shape[0] == len(self)},
        )


@dataclass
class TrainRunConfig:
    """完整的实验描述"""

    benchmark: str = "derivative"
    variant: str = "key"
    protocol: str = "fixed"
    total_steps: int = 125_000
    batch_size: int = 64
    lr: float = 5e-4
    milestones: List[int] = field(default_factory=lambda: [25_000, 75_000])
    factors: List[float] = field(default_factory=lambda: [0.2, 0.5])
    clip_norm: float = 1.0
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    eval_every: int = 1000
    drop_rate: float = 0.2
    eval_seed: int = 12345
    query_subsample: Optional[int] = None
    dtype: str = "float32"
    device: str = "cpu"
    data_dir: Optional[str] = None
    card_overrides: Dict[str, Any] = field(default_factory=dict)
    branch: BranchConfig = field(default_factory=BranchConfig)
    trunk: TrunkConfig = field(default_factory=TrunkConfig)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["branch"] = self.branch.to_dict()
        data["trunk"] = self.trunk.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainRunConfig":
        data = dict(data)
        if isinstance(data.get("branch"), dict):
            data["branch"] = BranchConfig.from_dict(data["branch"])
        if isinstance(data.get("trunk"), dict):
            data["trunk"] = TrunkConfig.from_dict(data["trunk"])
        return _from_dict(cls, data)


@dataclass
class MetricsRecord:
    """评估记录"""

    step: int
    test_mse: float
    rel_l2: float
    wall_clock: float = 0.0
    seed: int = 0
    train_loss: Optional[float] = None

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class RunRecord:
    """训练运行记录"""

    id: int
    name: str
    benchmark: str
    variant: str
    protocol: str
    seed: int
    config: Dict[str, Any] = field(default_factory=dict)
    checkpoint: Optional[str] = None
    status: str = "created"
    created_at: Optional[datetime] = None

    def to_dict(self) -> Dict:
        return {
            "id": self.id,
            "name": self.name,
            "benchmark": self.benchmark,
            "variant": self.variant,
            "protocol": self.protocol,
            "seed": self.seed,
            "config": self.config,
            "checkpoint": self.checkpoint,
            "status": self.status,
            "created_at": self.created_at.isoformat() if self.created_at else None,
        }


@dataclass
class ExperimentManifest:
    """命令行实验清单"""

    command: str
    output_dir: str
    config_path: Optional[str] = None
    overrides: List[str] = field(default_factory=list)
    seeds: List[int] = field(default_factory=lambda: [0])

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class ReferenceBranch:
    """参考分支：c_i^k、ξ_ij^k、θ_i^k 与主干 τ_k 的参数"""

    locations: np.ndarray  # m×d_x
    c: np.ndarray  # p×n
    xi: np.ndarray  # p×n×m
    theta: np.ndarray  # p×n
    routing: np.ndarray  # p，分量 ℓ(k)
    trunk_w: np.ndarray  # p×d_y
    trunk_b: np.ndarray  # p
    d_out: int
    activation: str = "tanh"
    min_code_gap: float = 0.0

    @property
    def m(self) -> int:
        return int(self.xi.shape[2])

    @property
    def n(self) -> int:
        return int(self.xi.shape[1])

    @property
    def p(self) -> int:
        return int(self.xi.shape[0])

    @property
    def codes(self) -> np.ndarray:
        """γ_i^k = Σ_j ξ_ij^k"""
        return self.xi.sum(axis=2)


@dataclass
class IdealConstruction:
    """理想构造：键、值缩放、查询令牌、插值读出与路由矩阵"""

    encodings: np.ndarray  # m×d_PE
    keys: np.ndarray  # m×m
    scale: float  # λ
    alpha: float  # α_m
    queries: np.ndarray  # pn×m
    codes: np.ndarray  # pn
    bary_weights: np.ndarray  # pn
    W: np.ndarray  # p×pn
    mix_fn: str = "tanh"


@dataclass
class VerificationReport:
    """UAT 数值校验报告"""

    m: int
    n: int
    p: int
    d_out: int
    n_test: int
    min_code_gap: float
    scale: float
    sup_discrepancy: float
    token_identity_error: float
    tolerance: float
    passed: bool

    def to_dict(self) -> Dict:
        return asdict(self)
