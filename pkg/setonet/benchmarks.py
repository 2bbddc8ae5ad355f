"""
基准卡片与数据集生成
命名基准的预设参数、划分生成（可并行）、默认模型/训练配置以及传感器重排
"""

import copy
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from . import darcy, diffraction, green_fields, poly_family, transport
from .dataset_io import GENERATOR_VERSION, write_dataset
from .elastic import load_elastic_dataset
from .errors import ConfigValidationError, DatasetFormatError
from .models import (
    BenchmarkCard,
    BranchConfig,
    OperatorDataset,
    OperatorSample,
    PositionalEncodingConfig,
    QueryBatch,
    SensorSet,
    TrainRunConfig,
    TrunkConfig,
    VARIANTS,
)
from .seeding import sample_rng
from .sensors import linspace_indices, sample_fixed_layout

logger = logging.getLogger(__name__)

ALL_PROTOCOLS = ["fixed", "variable", "dropoff"]
HEAT_BETA = {10: 9.0, 30: 8.0}

SCHEDULES = {
    "long": {"total_steps": 125_000, "milestones": [25_000, 75_000], "batch_size": 64},
    "short": {"total_steps": 50_000, "milestones": [15_000, 30_000], "batch_size": 32},
}

CARDS: Dict[str, BenchmarkCard] = {
    "derivative": BenchmarkCard(
        name="derivative",
        domain_low=[-1.0], domain_high=[1.0], query_low=[-1.0], query_high=[1.0],
        d_x=1, d_u=1, d_y=1, d_out=1, M=100, N_q=200, p=32, pe_max=0.1,
        mix_fn="softplus", key_hidden=300, rho_hidden=300,
        augment_values_with_coords=True, protocols=list(ALL_PROTOCOLS),
        schedule="long", train_size=0, test_size=960,
        params={"task": "derivative"},
    ),
    "integral": BenchmarkCard(
        name="integral",
        domain_low=[-1.0], domain_high=[1.0], query_low=[-1.0], query_high=[1.0],
        d_x=1, d_u=1, d_y=1, d_out=1, M=100, N_q=200, p=32, pe_max=0.1,
        mix_fn="softplus", key_hidden=200, rho_hidden=300,
        augment_values_with_coords=False, protocols=list(ALL_PROTOCOLS),
        schedule="long", train_size=0, test_size=960,
        params={"task": "integral"},
    ),
    "darcy1d": BenchmarkCard(
        name="darcy1d",
        domain_low=[0.0], domain_high=[1.0], query_low=[0.0], query_high=[1.0],
        d_x=1, d_u=1, d_y=1, d_out=1, M=300, N_q=300, p=32, pe_max=0.1,
        mix_fn="softplus", key_hidden=200, rho_hidden=300,
        augment_values_with_coords=False, protocols=list(ALL_PROTOCOLS),
        schedule="long", train_size=10_000, test_size=1_000,
        params={
            "grid_points": darcy.GRID_POINTS,
            "length_scale": darcy.LENGTH_SCALE,
            "variance": darcy.VARIANCE,
            "newton_tol": 1e-10,
            "newton_max_iter": 50,
        },
    ),
    "elastic": BenchmarkCard(
        name="elastic",
        domain_low=[0.0], domain_high=[1.0], query_low=[0.0, 0.0], query_high=[1.0, 1.0],
        d_x=1, d_u=1, d_y=2, d_out=1, M=301, N_q=1048, p=128, pe_max=0.1,
        mix_fn="softplus", key_hidden=200, rho_hidden=300,
        augment_values_with_coords=False, protocols=list(ALL_PROTOCOLS),
        schedule="long", train_size=1_900, test_size=100,
        params={"path": None},
    ),
    "heat": BenchmarkCard(
        name="heat",
        domain_low=[0.0, 0.0], domain_high=[1.0, 1.0],
        query_low=[0.0, 0.0], query_high=[1.0, 1.0],
        d_x=2, d_u=1, d_y=2, d_out=1, M=10, N_q=8192, p=128, pe_max=0.01,
        mix_fn="tanh", key_hidden=256, rho_hidden=256,
        augment_values_with_coords=False, protocols=["fixed"],
        schedule="short", train_size=10_000, test_size=1_000, point_cloud=True,
        params={
            "eps": green_fields.HEAT_SOFTENING,
            "beta": HEAT_BETA[10],
            "seed_grid": 25,
            "proposal_grid": 128,
        },
    ),
    "advdiff": BenchmarkCard(
        name="advdiff",
        domain_low=[0.0, 0.0], domain_high=[1.0, 1.0],
        query_low=[0.0, 0.0], query_high=[1.0, 1.0],
        d_x=2, d_u=1, d_y=2, d_out=1, M=30, N_q=4096, p=128, pe_max=0.01,
        mix_fn="tanh", key_hidden=256, rho_hidden=256,
        augment_values_with_coords=False, protocols=["fixed"],
        schedule="short", train_size=10_000, test_size=1_000, point_cloud=True,
        params={
            "diffusivity": green_fields.DIFFUSIVITY,
            "velocity": list(green_fields.VELOCITY),
            "beta": 4.0,
            "seed_grid": 25,
            "proposal_grid": 128,
        },
    ),
    "diffraction": BenchmarkCard(
        name="diffraction",
        domain_low=[0.0, 0.0], domain_high=[1.0, 1.0],
        query_low=[0.0, 0.0], query_high=[1.0, 1.0],
        d_x=2, d_u=2, d_y=2, d_out=2, M=10, N_q=diffraction.GRID_SIZE**2, p=128,
        pe_max=0.01, mix_fn="tanh", key_hidden=256, rho_hidden=256,
        augment_values_with_coords=False, protocols=["fixed"],
        schedule="short", train_size=20_000, test_size=1_000, point_cloud=True,
        params={
            "bump_width": diffraction.BUMP_WIDTH,
            "sigma_env": diffraction.ENVELOPE_WIDTH,
            "t0": diffraction.PROPAGATION_TIME,
            "grid_size": diffraction.GRID_SIZE,
        },
    ),
    "transport": BenchmarkCard(
        name="transport",
        domain_low=[-5.0, -5.0], domain_high=[5.0, 5.0],
        query_low=[-5.0, -5.0], query_high=[5.0, 5.0],
        d_x=2, d_u=1, d_y=2, d_out=2, M=512, N_q=1024, p=128, pe_max=0.1,
        mix_fn="tanh", key_hidden=256, rho_hidden=256,
        augment_values_with_coords=False, protocols=["fixed"],
        schedule="short", train_size=20_000, test_size=1_000, point_cloud=True,
        params={
            "grid_size": transport.GRID_SIZE,
            "sinkhorn_eps": transport.SINKHORN_EPS,
            "sinkhorn_max_iter": transport.SINKHORN_MAX_ITER,
            "sinkhorn_tol": transport.SINKHORN_TOL,
        },
    ),
}

GRID_BENCHMARKS = ("darcy1d", "elastic")
POLY_BENCHMARKS = poly_family.TASKS


def list_benchmarks() -> List[str]:
    return sorted(CARDS)


def get_card(name: str, overrides: Optional[Mapping[str, Any]] = None) -> BenchmarkCard:
    """取命名基准卡片的副本并应用覆盖

    Args:
        name: 基准名
        overrides: 字段覆盖，生成参数使用 "params.xxx" 形式的键

    Returns:
        BenchmarkCard

    Raises:
        ConfigValidationError: 基准未知或覆盖字段不存在
    """
    if name not in CARDS:
        raise ConfigValidationError(
            f"未知的基准: {name}（可选: {', '.join(list_benchmarks())}）", field="benchmark"
        )
    card = copy.deepcopy(CARDS[name])
    overrides = dict(overrides or {})
    for key, value in overrides.items():
        if key.startswith("params."):
            sub = key[len("params."):]
            if sub not in card.params:
                raise ConfigValidationError(f"基准 {name} 没有生成参数: {sub}", field=key)
            card.params[sub] = value
        elif key in ("name",) or not hasattr(card, key):
            raise ConfigValidationError(f"无法覆盖的卡片字段: {key}", field=key)
        else:
            setattr(card, key, value)

    if name == "heat" and "M" in overrides and "params.beta" not in overrides:
        card.params["beta"] = HEAT_BETA.get(int(card.M), card.params["beta"])
    return card


def validate_card(card: BenchmarkCard) -> Tuple[bool, List[str]]:
    """验证卡片参数

    Returns:
        (是否有效, 错误信息列表)
    """
    errors = []
    if card.M < 1:
        errors.append("传感器数量 M 必须为正")
    if card.N_q < 1:
        errors.append("查询点数 N_q 必须为正")
    if card.p < 1:
        errors.append("基函数个数 p 必须为正")
    if not 0 < card.pe_max <= 1:
        errors.append("位置编码最小尺度必须位于 (0, 1]")
    if len(card.domain_low) != card.d_x or len(card.domain_high) != card.d_x:
        errors.append("定义域维度与 d_x 不一致")
    if any(lo >= hi for lo, hi in zip(card.domain_low, card.domain_high)):
        errors.append("定义域下界必须小于上界")
    if card.train_size < 0 or card.test_size < 0:
        errors.append("划分规模不能为负")
    if card.schedule not in SCHEDULES:
        errors.append(f"未知的训练日程: {card.schedule}")
    if card.point_cloud and card.protocols != ["fixed"]:
        errors.append("点云基准只支持 fixed 协议")
    if card.name == "darcy1d":
        G = int(card.params["grid_points"])
        if card.M > G or card.N_q > G:
            errors.append(f"传感器数或查询点数超过网格点数 {G}")
    if card.name in ("heat", "advdiff"):
        seed_count = int(card.params["seed_grid"]) ** 2
        if card.N_q < seed_count:
            errors.append(f"N_q 至少为种子网格规模 {seed_count}")
    if card.name == "diffraction" and card.N_q != int(card.params["grid_size"]) ** 2:
        errors.append("衍射基准的查询点为完整网格，N_q 必须等于 grid_size²")
    return len(errors) == 0, errors


def require_valid_card(card: BenchmarkCard) -> None:
    is_valid, errors = validate_card(card)
    if not is_valid:
        raise ConfigValidationError("; ".join(errors), field="card")


def _poly_layout(card: BenchmarkCard, seed: int) -> np.ndarray:
    return sample_fixed_layout(card.domain_low, card.domain_high, card.M, seed)


def _grid_indices(card: BenchmarkCard) -> Tuple[np.ndarray, np.ndarray]:
    G = int(card.params["grid_points"])
    return linspace_indices(G, card.M), linspace_indices(G, card.N_q)


def generate_sample(card_data: Dict, split: str, seed: int, index: int) -> OperatorSample:
    """生成单个样本，随机数流只依赖 (种子, 划分, 序号)"""
    card = BenchmarkCard.from_dict(card_data)
    rng = sample_rng(seed, split, index)
    params = card.params

    if card.name == "darcy1d":
        forcing = darcy.sample_grf(
            rng, int(params["grid_points"]), params["length_scale"], params["variance"]
        )
        u = darcy.solve_darcy_1d(
            forcing,
            tol=params["newton_tol"],
            max_iter=int(params["newton_max_iter"]),
            seed=seed * 1_000_003 + index,
        )
        sensor_idx, query_idx = _grid_indices(card)
        sample = OperatorSample(
            sensors=SensorSet(forcing.grid[sensor_idx, None], forcing.values[sensor_idx, None]),
            queries=QueryBatch(forcing.grid[query_idx, None], u[query_idx, None]),
            meta={"input_grid_values": forcing.values},
        )
    elif card.name == "heat":
        sample = green_fields.heat_sample(
            rng, card.M, card.N_q, params["beta"], params["eps"],
            int(params["seed_grid"]), int(params["proposal_grid"]),
        )
    elif card.name == "advdiff":
        sample = green_fields.advdiff_sample(
            rng, card.M, card.N_q, params["beta"], params["diffusivity"],
            params["velocity"], int(params["seed_grid"]), int(params["proposal_grid"]),
        )
    elif card.name == "diffraction":
        sample = diffraction.diffraction_sample(
            rng, card.M, params["bump_width"], params["sigma_env"], params["t0"],
            int(params["grid_size"]),
        )
    elif card.name == "transport":
        sample = transport.ot_sample(
            rng, card.M, card.N_q, int(params["grid_size"]), params["sinkhorn_eps"],
            int(params["sinkhorn_max_iter"]), params["sinkhorn_tol"],
        )
        sample.meta["velocity_field"] = sample.meta["velocity_field"].astype(np.float32)
        sample.meta.pop("sinkhorn_iters", None)
    else:
        raise ConfigValidationError(f"基准 {card.name} 不支持逐样本生成", field="benchmark")
    return sample


def _generate_one(task: Tuple[Dict, str, int, int]) -> OperatorSample:
    return generate_sample(*task)


def _shared_or_stacked(arrays: List[np.ndarray]) -> np.ndarray:
    """所有样本布局一致时只保留一份（首维为 1）"""
    first = arrays[0]
    if all(a.shape == first.shape and np.array_equal(a, first) for a in arrays[1:]):
        return first[None].copy()
    return np.stack(arrays)


def stack_samples(samples: List[OperatorSample], metadata: Optional[Dict] = None) -> OperatorDataset:
    """把样本列表堆叠为数据集"""
    if not samples:
        raise ValueError("样本列表为空")
    extras = {}
    for key in samples[0].meta:
        extras[key] = np.stack([np.asarray(s.meta[key]) for s in samples])
    return OperatorDataset(
        locations=_shared_or_stacked([np.asarray(s.sensors.locations) for s in samples]),
        values=np.stack([np.asarray(s.sensors.values) for s in samples]),
        query_points=_shared_or_stacked([np.asarray(s.queries.points) for s in samples]),
        targets=np.stack([np.asarray(s.queries.targets) for s in samples]),
        extras=extras,
        metadata=dict(metadata or {}),
    )


def generate_split(
    card: BenchmarkCard, split: str, n_samples: int, seed: int, jobs: int = 1
) -> OperatorDataset:
    """生成一个划分

    Args:
        card: 基准卡片
        split: 划分名
        n_samples: 样本数
        seed: 主种子
        jobs: 并行进程数，结果与串行一致

    Returns:
        OperatorDataset

    Raises:
        ConfigValidationError: 基准不支持生成或参数非法
    """
    require_valid_card(card)
    if n_samples < 1:
        raise ConfigValidationError("样本数必须为正", field=f"{split}_size")

    if card.name in POLY_BENCHMARKS:
        layout = _poly_layout(card, seed)
        stream = poly_family.gen_poly_family(
            seed, card.params["task"], layout, n_samples, card.N_q, split
        )
        dataset = stack_samples(list(stream))
        dataset.metadata["input_grid"] = layout.reshape(-1).tolist()
        return dataset
    if card.name == "elastic":
        raise ConfigValidationError("弹性板数据需从外部文件加载（设置 params.path）", field="benchmark")

    card_data = card.to_dict()
    tasks = [(card_data, split, seed, i) for i in range(n_samples)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            samples = list(executor.map(_generate_one, tasks, chunksize=max(1, n_samples // (4 * jobs))))
    else:
        samples = []
        for i, task in enumerate(tasks):
            samples.append(_generate_one(task))
            if (i + 1) % 1000 == 0:
                logger.info("%s/%s: 已生成 %d/%d 个样本", card.name, split, i + 1, n_samples)

    dataset = stack_samples(samples)
    if card.name == "darcy1d":
        dataset.metadata["input_grid"] = darcy.uniform_grid(int(card.params["grid_points"])).tolist()
    return dataset


def generate_dataset(
    card: BenchmarkCard,
    seed: int,
    out_dir: Optional[str] = None,
    train_size: Optional[int] = None,
    test_size: Optional[int] = None,
    jobs: int = 1,
    force: bool = False,
) -> Tuple[Dict[str, OperatorDataset], Dict[str, str]]:
    """生成（或加载）完整数据集，并可写出到目录

    Returns:
        (划分字典, 校验和字典)；未写出时校验和为空
    """
    train_size = card.train_size if train_size is None else train_size
    test_size = card.test_size if test_size is None else test_size

    if card.name == "elastic":
        if not card.params.get("path"):
            raise ConfigValidationError("弹性板基准需要设置 params.path", field="params.path")
        splits = load_elastic_dataset(card.params["path"], card.M, card.N_q)
    else:
        splits = {}
        if train_size > 0:
            splits["train"] = generate_split(card, "train", train_size, seed, jobs)
        if test_size > 0:
            splits["test"] = generate_split(card, "test", test_size, seed, jobs)

    checksums = {}
    if out_dir is not None:
        metadata = {
            "generator_version": GENERATOR_VERSION,
            "benchmark": card.name,
            "card": card.to_dict(),
            "seed": int(seed),
        }
        checksums = write_dataset(out_dir, splits, metadata, force=force)
    return splits, checksums


def default_model_config(card: BenchmarkCard, variant: str) -> Tuple[BranchConfig, TrunkConfig]:
    """基准默认的分支/主干配置

    Raises:
        ConfigValidationError: 变体未知
    """
    if variant not in VARIANTS:
        raise ConfigValidationError(f"未知的模型变体: {variant}", field="variant")

    branch = BranchConfig(
        variant=variant,
        d_x=card.d_x,
        d_u=card.d_u,
        p=card.p,
        d_out=card.d_out,
        mix_fn=card.mix_fn,
        n_sensors=card.M,
        augment_values_with_coords=card.augment_values_with_coords,
        domain=[float(card.domain_low[0]), float(card.domain_high[0])],
        pe=PositionalEncodingConfig(embed_dim=64, max_scale=card.pe_max, coordinate_dim=card.d_x),
        key_widths=[card.key_hidden],
        rho_tok_widths=[card.key_hidden],
        rho_widths=[card.rho_hidden],
    )
    trunk = TrunkConfig(d_y=card.d_y, hidden_widths=[256] * 4)

    if variant == "key":
        branch.n_pool = 169 if card.d_x == 1 else 224
        trunk.hidden_widths = [256] * 3
    elif variant == "attention":
        branch.n_pool = 1
    elif variant == "deeponet":
        branch.learn_bias = False
    elif variant == "vidon":
        branch.learn_bias = False
        trunk.with_tau0 = True
    return branch, trunk


def default_train_config(
    card: BenchmarkCard, variant: str = "key", protocol: str = "fixed"
) -> TrainRunConfig:
    """基准默认的训练配置"""
    schedule = SCHEDULES[card.schedule]
    branch, trunk = default_model_config(card, variant)
    return TrainRunConfig(
        benchmark=card.name,
        variant=variant,
        protocol=protocol,
        total_steps=schedule["total_steps"],
        batch_size=schedule["batch_size"],
        milestones=list(schedule["milestones"]),
        factors=[0.2, 0.5],
        branch=branch,
        trunk=trunk,
    )


def relayout(dataset: OperatorDataset, card: BenchmarkCard, count: int) -> OperatorDataset:
    """把测试集改写为 count 个等间距传感器

    网格基准从存储的完整输入网格按线性间隔下标取点；导数/积分基准按系数重新求值。

    Raises:
        ConfigValidationError: 点云基准不支持改变传感器数量
        ValueError: count 超过网格分辨率
        DatasetFormatError: 网格数据集缺少完整输入网格
    """
    if count == dataset.n_sensors:
        return dataset
    if card.point_cloud:
        raise ConfigValidationError(f"点云基准 {card.name} 不支持传感器数量消融", field="benchmark")

    if card.name in POLY_BENCHMARKS:
        if "coeffs" not in dataset.extras:
            raise ConfigValidationError("数据集缺少系数，无法重新求值", field="extras")
        x = np.linspace(card.domain_low[0], card.domain_high[0], count)
        values = poly_family.task_inputs(card.params["task"], dataset.extras["coeffs"], x)
        locations = x[None, :, None]
    elif card.name in GRID_BENCHMARKS:
        if "input_grid" not in dataset.metadata or "input_grid_values" not in dataset.extras:
            raise DatasetFormatError("数据集缺少完整输入网格，无法改变传感器数量")
        grid = np.asarray(dataset.metadata["input_grid"], dtype=np.float64)
        idx = linspace_indices(len(grid), count)
        values = dataset.extras["input_grid_values"][:, idx]
        locations = grid[idx][None, :, None]
    else:
        raise ConfigValidationError(f"基准 {card.name} 不支持传感器数量消融", field="benchmark")

    metadata = dict(dataset.metadata)
    metadata["relayout_count"] = int(count)
    return OperatorDataset(
        locations=locations,
        values=values[..., None],
        query_points=dataset.query_points,
        targets=dataset.targets,
        extras=dict(dataset.extras),
        metadata=metadata,
    )
