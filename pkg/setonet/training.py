"""
训练与评估模块
损失、Adam + 分段乘性学习率、梯度裁剪、协议钩子、周期评估、检查点与多种子汇总
"""

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from torch.optim.lr_scheduler import LambdaLR

from . import poly_family
from .benchmarks import POLY_BENCHMARKS, generate_split
from .dataset_io import read_dataset
from .elastic import load_elastic_dataset
from .errors import ConfigValidationError, NumericalFailure, ProtocolMismatchError
from .models import (
    PROTOCOLS,
    BenchmarkCard,
    MetricsRecord,
    OperatorDataset,
    TrainRunConfig,
)
from .seeding import stream_rng
from .sensors import dropoff_batch, resample_variable_layout, shared_dropoff_batch
from .trunk import OperatorNet

logger = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}
REL_L2_FLOOR = 1e-12
TRAIN_STREAM = 7
EVAL_BATCH = 32


def schedule_factor(step: int, milestones: Sequence[int], factors: Sequence[float]) -> float:
    """里程碑之后累乘衰减因子"""
    factor = 1.0
    for milestone, f in zip(milestones, factors):
        if step >= milestone:
            factor *= f
    return factor


def lr_at_step(step: int, cfg: TrainRunConfig) -> float:
    """分段常数乘性学习率

    Raises:
        ValueError: step 不在 [0, total_steps) 内
    """
    if not 0 <= step < cfg.total_steps:
        raise ValueError(f"步数超出范围: {step}")
    return cfg.lr * schedule_factor(step, cfg.milestones, cfg.factors)


def training_protocol(protocol: str, card: BenchmarkCard) -> str:
    """训练时使用的协议：drop-off 在导数/积分上按 variable 训练，其余按 fixed 训练"""
    if protocol == "dropoff":
        return "variable" if card.name in POLY_BENCHMARKS else "fixed"
    return protocol


def _tensor(array: np.ndarray, dtype: torch.dtype, device: str) -> torch.Tensor:
    return torch.as_tensor(np.array(array, copy=True), dtype=dtype, device=device)


@dataclass
class Batch:
    locations: np.ndarray
    values: np.ndarray
    queries: np.ndarray
    targets: np.ndarray


class PolyBatchSource:
    """导数/积分的在线批次：每步重新抽取系数"""

    def __init__(
        self,
        card: BenchmarkCard,
        layout: np.ndarray,
        protocol: str,
        batch_size: int,
        seed: int,
    ):
        self.card = card
        self.task = card.params["task"]
        self.layout = np.asarray(layout, dtype=np.float64).reshape(-1)
        self.queries = poly_family.query_grid(card.N_q, card.query_low[0], card.query_high[0])
        self.protocol = protocol
        self.batch_size = batch_size
        self.seed = seed

    def next_batch(self, step: int) -> Batch:
        rng = stream_rng(self.seed, TRAIN_STREAM, step)
        coeffs = poly_family.draw_coefficients(rng, self.batch_size)
        x = self.layout
        if self.protocol == "variable":
            x = resample_variable_layout(
                self.card.domain_low, self.card.domain_high, len(x), rng
            ).reshape(-1)
        B = self.batch_size
        return Batch(
            locations=np.broadcast_to(x[None, :, None], (B, len(x), 1)),
            values=poly_family.task_inputs(self.task, coeffs, x)[..., None],
            queries=np.broadcast_to(self.queries[None, :, None], (B, len(self.queries), 1)),
            targets=poly_family.task_targets(self.task, coeffs, self.queries)[..., None],
        )


class DatasetBatchSource:
    """从存储的训练集抽取批次；variable 协议下整批共享一次丢弃替换"""

    def __init__(
        self,
        dataset: OperatorDataset,
        protocol: str,
        batch_size: int,
        seed: int,
        drop_rate: float = 0.2,
        query_subsample: Optional[int] = None,
    ):
        if len(dataset) == 0:
            raise ConfigValidationError("训练集为空", field="data_dir")
        self.dataset = dataset
        self.protocol = protocol
        self.batch_size = min(batch_size, len(dataset))
        self.seed = seed
        self.drop_rate = drop_rate
        self.query_subsample = query_subsample

    def next_batch(self, step: int) -> Batch:
        rng = stream_rng(self.seed, TRAIN_STREAM, step)
        idx = rng.choice(len(self.dataset), size=self.batch_size, replace=False)
        locations = self.dataset.locations_for(idx)
        values = self.dataset.values[idx]
        if self.protocol == "variable":
            locations, values = shared_dropoff_batch(locations, values, self.drop_rate, rng)
        queries = self.dataset.queries_for(idx)
        targets = self.dataset.targets[idx]
        n_q = queries.shape[1]
        if self.query_subsample is not None and self.query_subsample < n_q:
            q_idx = np.sort(rng.choice(n_q, size=self.query_subsample, replace=False))
            queries, targets = queries[:, q_idx], targets[:, q_idx]
        return Batch(locations, values, queries, targets)


def protocol_view(
    locations: np.ndarray,
    values: np.ndarray,
    extras: Dict[str, np.ndarray],
    card: BenchmarkCard,
    protocol: str,
    drop_rate: float,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """评估时按协议改写传感器

    fixed 原样返回；dropoff 在存储布局上逐样本重抽丢弃掩码；
    variable 对导数/积分重新抽取批内共享布局并按系数求值，对网格基准整批共享一次丢弃替换。
    """
    if protocol == "fixed":
        return locations, values
    if protocol == "dropoff":
        return dropoff_batch(locations, values, drop_rate, rng)
    if card.name in POLY_BENCHMARKS:
        x = resample_variable_layout(
            card.domain_low, card.domain_high, locations.shape[1], rng
        ).reshape(-1)
        new_values = poly_family.task_inputs(card.params["task"], extras["coeffs"], x)
        return np.broadcast_to(x[None, :, None], locations.shape), new_values[..., None]
    return shared_dropoff_batch(locations, values, drop_rate, rng)


def check_protocol(model_variant: str, protocol: str, card: BenchmarkCard) -> None:
    """
    Raises:
        ConfigValidationError: 协议名未知
        ProtocolMismatchError: 协议与模型或基准不匹配
    """
    if protocol not in PROTOCOLS:
        raise ConfigValidationError(f"未知的传感器协议: {protocol}", field="protocol")
    if model_variant == "deeponet" and protocol == "variable":
        raise ProtocolMismatchError(
            "DeepONet 需要固定顺序的传感器向量，不适用于 variable 协议", field="protocol"
        )
    if model_variant == "deeponet" and card.point_cloud:
        raise ProtocolMismatchError(
            f"DeepONet 需要固定顺序的传感器向量，不适用于点云基准 {card.name}", field="benchmark"
        )
    if protocol not in card.protocols:
        raise ProtocolMismatchError(
            f"基准 {card.name} 只支持 {', '.join(card.protocols)} 协议", field="protocol"
        )


def evaluate(
    model: OperatorNet,
    dataset: OperatorDataset,
    card: BenchmarkCard,
    protocol: str = "fixed",
    drop_rate: float = 0.2,
    eval_seed: int = 12345,
    batch_size: int = EVAL_BATCH,
) -> MetricsRecord:
    """在测试集上评估

    MSE 对所有查询点与通道取平均；相对 ℓ2 为逐样本 ‖pred-true‖₂/‖true‖₂ 的平均，
    分母以 1e-12 为下限。

    Args:
        model: 算子网络
        dataset: 测试集
        card: 基准卡片
        protocol: fixed / variable / dropoff
        drop_rate: 丢弃比例
        eval_seed: 评估随机种子，保证不同模型的评估布局一致
        batch_size: 评估批大小

    Returns:
        MetricsRecord（step 为 0）

    Raises:
        ValueError: 数据集为空
        ProtocolMismatchError: 协议不适用
    """
    if len(dataset) == 0:
        raise ValueError("评估数据集为空")
    check_protocol(model.variant, protocol, card)

    param = next(model.parameters())
    dtype, device = param.dtype, param.device
    rng = np.random.default_rng(eval_seed)
    sq_error = 0.0
    n_entries = 0
    rel_errors = []

    was_training = model.training
    model.eval()
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = np.arange(start, min(start + batch_size, len(dataset)))
            extras = {k: v[idx] for k, v in dataset.extras.items() if v.shape[0] == len(dataset)}
            locations, values = protocol_view(
                dataset.locations_for(idx), dataset.values[idx], extras, card, protocol, drop_rate, rng
            )
            pred = model(
                _tensor(locations, dtype, device),
                _tensor(values, dtype, device),
                _tensor(dataset.queries_for(idx), dtype, device),
            )
            diff = pred.double().cpu().numpy() - dataset.targets[idx]
            sq_error += float(np.sum(diff**2))
            n_entries += diff.size
            err = np.sqrt(np.sum(diff**2, axis=(1, 2)))
            norm = np.sqrt(np.sum(dataset.targets[idx] ** 2, axis=(1, 2)))
            rel_errors.append(err / np.maximum(norm, REL_L2_FLOOR))
    model.train(was_training)

    return MetricsRecord(
        step=0,
        test_mse=sq_error / n_entries,
        rel_l2=float(np.mean(np.concatenate(rel_errors))),
    )


@dataclass
class TrainResult:
    """训练结果：模型、评估记录与检查点路径"""

    model: OperatorNet
    records: List[MetricsRecord] = field(default_factory=list)
    seed: int = 0
    checkpoint: Optional[str] = None

    @property
    def final(self) -> Optional[MetricsRecord]:
        return self.records[-1] if self.records else None


def build_model(cfg: TrainRunConfig, seed: int) -> OperatorNet:
    """按种子初始化模型"""
    torch.manual_seed(seed)
    model = OperatorNet(cfg.branch, cfg.trunk)
    return model.to(dtype=_DTYPES[cfg.dtype], device=cfg.device)


def load_datasets(
    cfg: TrainRunConfig, card: BenchmarkCard
) -> Tuple[Optional[OperatorDataset], OperatorDataset]:
    """读取 (训练集, 测试集)；导数/积分的训练数据在线生成，训练集为 None

    未指定 data_dir 时在内存中按卡片规模生成（数据种子 0）。
    """
    if cfg.data_dir:
        test = read_dataset(cfg.data_dir, "test")
        train = None if card.name in POLY_BENCHMARKS else read_dataset(cfg.data_dir, "train")
        return train, test

    if card.name == "elastic":
        if not card.params.get("path"):
            raise ConfigValidationError("弹性板基准需要设置 params.path", field="params.path")
        splits = load_elastic_dataset(card.params["path"], card.M, card.N_q)
        return splits["train"], splits["test"]

    logger.info("未指定数据目录，在内存中生成 %s 数据集", card.name)
    test = generate_split(card, "test", card.test_size, seed=0)
    train = None
    if card.name not in POLY_BENCHMARKS:
        train = generate_split(card, "train", card.train_size, seed=0)
    return train, test


def make_batch_source(
    cfg: TrainRunConfig,
    card: BenchmarkCard,
    train: Optional[OperatorDataset],
    test: OperatorDataset,
    seed: int,
):
    protocol = training_protocol(cfg.protocol, card)
    if card.name in POLY_BENCHMARKS:
        return PolyBatchSource(card, test.locations[0], protocol, cfg.batch_size, seed)
    if train is None:
        raise ConfigValidationError(f"基准 {card.name} 需要训练集", field="data_dir")
    return DatasetBatchSource(
        train, protocol, cfg.batch_size, seed, cfg.drop_rate, cfg.query_subsample
    )


def save_checkpoint(path: str, model: OperatorNet, cfg: TrainRunConfig, card: BenchmarkCard, seed: int, step: int) -> None:
    """检查点内嵌配置、卡片与种子"""
    torch.save(
        {
            "model_state": model.state_dict(),
            "config": cfg.to_dict(),
            "card": card.to_dict(),
            "seed": int(seed),
            "step": int(step),
        },
        path,
    )


def load_checkpoint(path: str, device: str = "cpu"):
    """读取检查点

    Returns:
        (模型, TrainRunConfig, BenchmarkCard, 种子)
    """
    payload = torch.load(path, map_location=device)
    cfg = TrainRunConfig.from_dict(payload["config"])
    card = BenchmarkCard.from_dict(payload["card"])
    model = OperatorNet(cfg.branch, cfg.trunk).to(dtype=_DTYPES[cfg.dtype], device=device)
    model.load_state_dict(payload["model_state"])
    return model, cfg, card, int(payload["seed"])


def train(
    cfg: TrainRunConfig,
    card: BenchmarkCard,
    test: OperatorDataset,
    train_set: Optional[OperatorDataset] = None,
    seed: int = 0,
    checkpoint_path: Optional[str] = None,
    on_record: Optional[Callable[[MetricsRecord], None]] = None,
    model: Optional[OperatorNet] = None,
) -> TrainResult:
    """训练一个种子

    MSE 损失，Adam（默认 β 与 ε，无权重衰减），全局范数梯度裁剪，
    每 eval_every 步及最后一步在测试集上按配置协议评估；不做早停与最优检查点选择。

    Args:
        cfg: 训练配置
        card: 基准卡片
        test: 测试集
        train_set: 训练集（导数/积分在线生成时为 None）
        seed: 随机种子
        checkpoint_path: 训练结束后保存检查点的路径
        on_record: 每条评估记录的回调

    Returns:
        TrainResult

    Raises:
        NumericalFailure: 损失出现非有限值
        ProtocolMismatchError: 协议与模型或基准不匹配
    """
    check_protocol(cfg.variant, cfg.protocol, card)
    model = model if model is not None else build_model(cfg, seed)
    dtype = next(model.parameters()).dtype
    source = make_batch_source(cfg, card, train_set, test, seed)

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    scheduler = LambdaLR(
        optimizer, lambda s: schedule_factor(s, cfg.milestones, cfg.factors)
    )
    defaults = optimizer.defaults
    logger.info(
        "开始训练 %s/%s/%s 种子 %d: 参数量 %d, Adam betas=%s eps=%g, 裁剪范数 %g",
        card.name, cfg.variant, cfg.protocol, seed, model.num_parameters(),
        defaults["betas"], defaults["eps"], cfg.clip_norm,
    )

    loss_fn = nn.MSELoss()
    result = TrainResult(model=model, seed=seed, checkpoint=checkpoint_path)
    started = time.perf_counter()
    model.train()
    for step in range(cfg.total_steps):
        batch = source.next_batch(step)
        pred = model(
            _tensor(batch.locations, dtype, cfg.device),
            _tensor(batch.values, dtype, cfg.device),
            _tensor(batch.queries, dtype, cfg.device),
        )
        loss = loss_fn(pred, _tensor(batch.targets, dtype, cfg.device))
        if not torch.isfinite(loss):
            raise NumericalFailure(
                "训练损失出现非有限值",
                details={"step": step, "lr": optimizer.param_groups[0]["lr"], "seed": seed},
            )

        optimizer.zero_grad()
        loss.backward()
        grad_norm = nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
        if grad_norm > cfg.clip_norm:
            logger.debug("第 %d 步梯度裁剪: %.3e -> %g", step, float(grad_norm), cfg.clip_norm)
        optimizer.step()
        scheduler.step()

        done = step + 1
        if done % cfg.eval_every == 0 or done == cfg.total_steps:
            record = evaluate(model, test, card, cfg.protocol, cfg.drop_rate, cfg.eval_seed)
            record.step = done
            record.seed = seed
            record.train_loss = float(loss.item())
            record.wall_clock = time.perf_counter() - started
            result.records.append(record)
            logger.info(json.dumps(record.to_dict(), ensure_ascii=False))
            if on_record is not None:
                on_record(record)
            model.train()

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, cfg, card, seed, cfg.total_steps)
        logger.info("检查点已保存: %s", checkpoint_path)
    return result


def aggregate_seeds(results: Sequence[Tuple[TrainRunConfig, MetricsRecord]]) -> Dict:
    """多种子汇总：均值与总体标准差

    Args:
        results: (配置, 最终评估记录) 列表

    Returns:
        表格行字典

    Raises:
        ValueError: 没有结果
        ConfigValidationError: 各种子配置不一致
    """
    if not results:
        raise ValueError("至少需要一个种子的结果")

    ignored = ("seeds", "device", "data_dir")
    reference = {k: v for k, v in results[0][0].to_dict().items() if k not in ignored}
    for cfg, _ in results[1:]:
        current = {k: v for k, v in cfg.to_dict().items() if k not in ignored}
        if current != reference:
            raise ConfigValidationError("各种子的配置不一致，无法汇总", field="config")

    rel = np.array([r.rel_l2 for _, r in results], dtype=np.float64)
    mse = np.array([r.test_mse for _, r in results], dtype=np.float64)
    cfg = results[0][0]
    return {
        "benchmark": cfg.benchmark,
        "variant": cfg.variant,
        "protocol": cfg.protocol,
        "rel_l2_mean": float(rel.mean()),
        "rel_l2_std": float(rel.std()),
        "mse_mean": float(mse.mean()),
        "mse_std": float(mse.std()),
        "n_seeds": len(results),
        "seeds": [r.seed for _, r in results],
    }
