"""
配置管理模块
JSON 配置文件、点分键覆盖（key=json值）、配置校验
"""

import json
import logging
from typing import Any, Dict, Iterable, List, Optional, Tuple

from .benchmarks import default_train_config, get_card, require_valid_card
from .errors import ConfigValidationError, ProtocolMismatchError
from .models import (
    ACTIVATIONS,
    MIX_FUNCTIONS,
    PROTOCOLS,
    VARIANTS,
    BenchmarkCard,
    TrainRunConfig,
)

logger = logging.getLogger(__name__)


def flatten_config(config: Dict[str, Any], parent_key: str = "", sep: str = ".") -> Dict[str, Any]:
    """递归展平嵌套配置字典"""
    flat = {}
    for k, v in config.items():
        new_key = f"{parent_key}{sep}{k}" if parent_key else k
        if isinstance(v, dict) and v and k not in ("card_overrides",):
            flat.update(flatten_config(v, new_key, sep))
        else:
            flat[new_key] = v
    return flat


def unflatten_config(flat: Dict[str, Any], sep: str = ".") -> Dict[str, Any]:
    """展平字典的逆操作"""
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        parts = key.split(sep)
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return nested


def load_config(filepath: str) -> Dict[str, Any]:
    """读取 JSON 配置文件

    Raises:
        ConfigValidationError: 文件不是合法 JSON 对象
    """
    with open(filepath, "r", encoding="utf-8") as file:
        try:
            data = json.load(file)
        except json.JSONDecodeError as e:
            raise ConfigValidationError(f"配置文件格式错误: {e}", field="config") from e
    if not isinstance(data, dict):
        raise ConfigValidationError("配置文件顶层必须是对象", field="config")
    return data


def parse_overrides(overrides: Iterable[str]) -> Dict[str, Any]:
    """解析 key=value 形式的覆盖，value 按 JSON 解析，失败时作为字符串

    Raises:
        ConfigValidationError: 缺少等号
    """
    parsed = {}
    for item in overrides or []:
        if "=" not in item:
            raise ConfigValidationError(f"覆盖项格式应为 key=value: {item}", field=item)
        key, raw = item.split("=", 1)
        try:
            parsed[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            parsed[key.strip()] = raw
    return parsed


def apply_overrides(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """把点分键覆盖应用到嵌套配置

    Raises:
        ConfigValidationError: 键不存在或类型与默认值不兼容
    """
    flat = flatten_config(base)
    for key, value in overrides.items():
        if key.startswith("card_overrides."):
            flat.setdefault("card_overrides", {})
            flat["card_overrides"] = dict(flat["card_overrides"] or {})
            flat["card_overrides"][key[len("card_overrides."):]] = value
            continue
        if key not in flat:
            raise ConfigValidationError(f"未知的配置项: {key}", field=key)
        flat[key] = _coerce(key, flat[key], value)
    return unflatten_config(flat)


def _coerce(key: str, default: Any, value: Any) -> Any:
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigValidationError(f"配置项 {key} 应为布尔值", field=key)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigValidationError(f"配置项 {key} 应为整数", field=key)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigValidationError(f"配置项 {key} 应为数值", field=key)
        return float(value)
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigValidationError(f"配置项 {key} 应为列表", field=key)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigValidationError(f"配置项 {key} 应为字符串", field=key)
    return value


def build_train_config(
    benchmark: str,
    variant: str = "key",
    protocol: str = "fixed",
    config_path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> Tuple[TrainRunConfig, BenchmarkCard]:
    """组装训练配置：基准默认值 <- 配置文件 <- 命令行覆盖

    Returns:
        (TrainRunConfig, BenchmarkCard)

    Raises:
        ConfigValidationError: 任一字段非法
    """
    file_data = load_config(config_path) if config_path else {}
    benchmark = file_data.get("benchmark", benchmark)
    variant = file_data.get("variant", variant)
    protocol = file_data.get("protocol", protocol)
    overrides = dict(overrides or {})
    benchmark = overrides.pop("benchmark", benchmark)
    variant = overrides.pop("variant", variant)
    protocol = overrides.pop("protocol", protocol)

    if variant not in VARIANTS:
        raise ConfigValidationError(
            f"未知的模型变体: {variant}（可选: {', '.join(VARIANTS)}）", field="variant"
        )
    card_overrides = dict(file_data.get("card_overrides", {}))
    card_overrides.update(
        {k[len("card_overrides."):]: v for k, v in overrides.items() if k.startswith("card_overrides.")}
    )
    for key in [k for k in overrides if k.startswith("params.")]:
        card_overrides[key] = overrides.pop(key)
    card = get_card(benchmark, card_overrides)
    require_valid_card(card)

    base = default_train_config(card, variant, protocol).to_dict()
    file_overrides = flatten_config({k: v for k, v in file_data.items() if k not in ("benchmark", "variant", "protocol")})
    data = apply_overrides(base, {**file_overrides, **overrides})
    data["card_overrides"] = card_overrides
    cfg = TrainRunConfig.from_dict(data)
    require_valid_config(cfg, card)
    return cfg, card


def validate_config(cfg: TrainRunConfig, card: BenchmarkCard) -> Tuple[bool, List[str]]:
    """验证训练配置

    Returns:
        (是否有效, 错误信息列表)，错误信息以 "字段: 说明" 开头
    """
    errors = []
    b = cfg.branch
    if cfg.variant not in VARIANTS:
        errors.append(f"variant: 未知的模型变体 {cfg.variant}")
    if cfg.protocol not in PROTOCOLS:
        errors.append(f"protocol: 未知的传感器协议 {cfg.protocol}")
    if cfg.variant != b.variant:
        errors.append("branch.variant: 与 variant 不一致")
    if cfg.total_steps <= 0:
        errors.append("total_steps: 必须为正")
    if cfg.batch_size <= 0:
        errors.append("batch_size: 必须为正")
    if cfg.lr < 0:
        errors.append("lr: 不能为负")
    if not cfg.clip_norm > 0:
        errors.append("clip_norm: 必须为正")
    if cfg.eval_every <= 0:
        errors.append("eval_every: 必须为正")
    if not cfg.seeds:
        errors.append("seeds: 至少需要一个种子")
    if len(cfg.milestones) != len(cfg.factors):
        errors.append("milestones: 与 factors 长度不一致")
    if any(b2 <= a2 for a2, b2 in zip(cfg.milestones, cfg.milestones[1:])):
        errors.append("milestones: 必须严格递增")
    if any(m <= 0 or m >= cfg.total_steps for m in cfg.milestones):
        errors.append("milestones: 必须位于 (0, total_steps) 内")
    if any(not 0 < f <= 1 for f in cfg.factors):
        errors.append("factors: 必须位于 (0, 1]")
    if not 0 <= cfg.drop_rate < 1:
        errors.append("drop_rate: 必须位于 [0, 1)")
    if cfg.query_subsample is not None and cfg.query_subsample <= 0:
        errors.append("query_subsample: 必须为正")
    if cfg.dtype not in ("float32", "float64"):
        errors.append(f"dtype: 不支持 {cfg.dtype}")

    if b.mix_fn not in MIX_FUNCTIONS:
        errors.append(f"branch.mix_fn: 未知的混合函数 {b.mix_fn}")
    if b.activation not in ACTIVATIONS or cfg.trunk.activation not in ACTIVATIONS:
        errors.append("branch.activation: 未知的激活函数")
    if b.d_x != card.d_x or b.d_u != card.d_u or b.d_out != card.d_out:
        errors.append("branch.d_x: 与基准卡片的维度不一致")
    if cfg.trunk.d_y != card.d_y:
        errors.append("trunk.d_y: 与基准卡片的查询维度不一致")
    if b.pe.coordinate_dim != b.d_x or b.pe.embed_dim % (2 * b.d_x) != 0:
        errors.append("branch.pe.embed_dim: 必须能被 2·d_x 整除且坐标维度一致")
    if b.variant == "attention" and b.d_v % b.heads != 0:
        errors.append("branch.heads: 必须整除 d_v")
    if b.variant == "deeponet" and b.n_sensors != card.M:
        errors.append("branch.n_sensors: 必须等于基准的传感器数量")

    if cfg.protocol not in card.protocols:
        errors.append(f"protocol: 基准 {card.name} 不支持 {cfg.protocol} 协议")
    if cfg.variant == "deeponet" and cfg.protocol == "variable":
        errors.append("protocol: DeepONet 不适用于 variable 协议")
    if cfg.variant == "deeponet" and card.point_cloud:
        errors.append(f"benchmark: DeepONet 需要固定顺序的传感器向量，不适用于点云基准 {card.name}")
    return len(errors) == 0, errors


def require_valid_config(cfg: TrainRunConfig, card: BenchmarkCard) -> None:
    """校验失败时抛出异常，field 为第一个出错的字段

    Raises:
        ProtocolMismatchError: 协议与模型或基准不匹配
        ConfigValidationError: 其他字段非法
    """
    is_valid, errors = validate_config(cfg, card)
    if is_valid:
        return
    field = errors[0].split(":", 1)[0]
    message = "; ".join(errors)
    if field in ("protocol", "benchmark") and cfg.protocol in PROTOCOLS:
        raise ProtocolMismatchError(message, field=field)
    raise ConfigValidationError(message, field=field)


def describe_config(cfg: TrainRunConfig, card: BenchmarkCard) -> str:
    """启动时打印的完整配置"""
    return json.dumps(
        {"run": cfg.to_dict(), "card": card.to_dict()}, ensure_ascii=False, indent=2
    )
