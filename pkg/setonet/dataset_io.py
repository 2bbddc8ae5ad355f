"""
数据集读写模块
每个划分一个 .npz 数组包，另附人类可读的 metadata.json（基准卡片、种子、版本、校验和）
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, Mapping, Optional

import numpy as np

from .errors import DatasetFormatError
from .models import OperatorDataset

GENERATOR_VERSION = "1.0"
METADATA_FILE = "metadata.json"
REQUIRED_METADATA = ("generator_version", "benchmark", "card", "seed", "splits")
EXTRA_PREFIX = "extra__"
CORE_ARRAYS = ("locations", "values", "query_points", "targets")


def array_checksum(arrays: Mapping[str, np.ndarray]) -> str:
    """按数组名、dtype、形状与原始字节计算 sha256

    与 npz 容器的时间戳无关，同一种子重新生成得到相同校验和。
    """
    digest = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        digest.update(name.encode("utf-8"))
        digest.update(str(arr.dtype).encode("utf-8"))
        digest.update(str(arr.shape).encode("utf-8"))
        digest.update(arr.tobytes())
    return digest.hexdigest()


def _split_arrays(dataset: OperatorDataset) -> Dict[str, np.ndarray]:
    arrays = {
        "locations": np.asarray(dataset.locations),
        "values": np.asarray(dataset.values),
        "query_points": np.asarray(dataset.query_points),
        "targets": np.asarray(dataset.targets),
    }
    for key, value in dataset.extras.items():
        arrays[EXTRA_PREFIX + key] = np.asarray(value)
    return arrays


def _split_file(out_dir: Path, split: str) -> Path:
    return out_dir / f"{split}.npz"


def write_dataset(
    out_dir: str,
    splits: Mapping[str, OperatorDataset],
    metadata: Dict,
    force: bool = False,
) -> Dict[str, str]:
    """写出数据集

    Args:
        out_dir: 输出目录
        splits: 划分名到数据集的映射
        metadata: 元数据，至少包含 benchmark、card、seed
        force: 是否覆盖已有数据集

    Returns:
        划分名到校验和的映射

    Raises:
        DatasetFormatError: 目录已存在数据集且未指定 force，或形状不一致
    """
    out_path = Path(out_dir)
    if (out_path / METADATA_FILE).exists() and not force:
        raise DatasetFormatError(f"输出目录已存在数据集: {out_path}（使用 --force 覆盖）")
    out_path.mkdir(parents=True, exist_ok=True)

    checksums = {}
    split_info = {}
    for name, dataset in splits.items():
        if dataset.targets.shape[0] != len(dataset):
            raise DatasetFormatError(f"划分 {name} 的样本数不一致")
        arrays = _split_arrays(dataset)
        np.savez(_split_file(out_path, name), **arrays)
        checksums[name] = array_checksum(arrays)
        split_info[name] = {
            "n_samples": len(dataset),
            "n_sensors": dataset.n_sensors,
            "n_queries": int(dataset.targets.shape[1]),
            "shared_layout": bool(dataset.locations.shape[0] == 1),
            "shapes": {k: list(v.shape) for k, v in arrays.items()},
            "metadata": dataset.metadata,
        }

    sidecar = dict(metadata)
    sidecar.setdefault("generator_version", GENERATOR_VERSION)
    sidecar["splits"] = split_info
    sidecar["checksums"] = checksums
    with open(out_path / METADATA_FILE, "w", encoding="utf-8") as file:
        json.dump(sidecar, file, ensure_ascii=False, indent=2, default=_json_default)

    logging.getLogger(__name__).info("数据集已写入 %s: %s", out_path, ", ".join(splits))
    return checksums


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"无法序列化的类型: {type(value).__name__}")


def read_metadata(out_dir: str) -> Dict:
    """读取并校验元数据

    Raises:
        DatasetFormatError: 文件缺失、缺少必需字段或版本不一致
    """
    path = Path(out_dir) / METADATA_FILE
    try:
        with open(path, "r", encoding="utf-8") as file:
            metadata = json.load(file)
    except FileNotFoundError as e:
        raise DatasetFormatError(f"缺少元数据文件: {path}") from e
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"元数据文件格式错误: {e}") from e

    missing = [k for k in REQUIRED_METADATA if k not in metadata]
    if missing:
        raise DatasetFormatError(f"元数据缺少必需字段: {', '.join(missing)}")
    if metadata["generator_version"] != GENERATOR_VERSION:
        raise DatasetFormatError(
            f"数据集版本不匹配: 文件为 {metadata['generator_version']}，当前为 {GENERATOR_VERSION}"
        )
    return metadata


def read_dataset(
    out_dir: str, split: str, verify: bool = True, metadata: Optional[Dict] = None
) -> OperatorDataset:
    """读取一个划分

    Args:
        out_dir: 数据集目录
        split: 划分名
        verify: 是否校验校验和

    Returns:
        OperatorDataset，metadata 中合并了划分信息与全局元数据

    Raises:
        DatasetFormatError: 划分不存在、数组缺失或校验和不一致
    """
    metadata = metadata or read_metadata(out_dir)
    if split not in metadata["splits"]:
        raise DatasetFormatError(f"数据集中不存在划分: {split}")

    path = _split_file(Path(out_dir), split)
    try:
        with np.load(path, allow_pickle=False) as bundle:
            arrays = {name: bundle[name] for name in bundle.files}
    except FileNotFoundError as e:
        raise DatasetFormatError(f"缺少数据文件: {path}") from e

    missing = [k for k in CORE_ARRAYS if k not in arrays]
    if missing:
        raise DatasetFormatError(f"数据文件缺少数组: {', '.join(missing)}")

    expected = metadata.get("checksums", {}).get(split)
    if verify and expected is not None and array_checksum(arrays) != expected:
        raise DatasetFormatError(f"划分 {split} 的校验和不一致")

    info = metadata["splits"][split]
    merged = {k: v for k, v in metadata.items() if k not in ("splits", "checksums")}
    merged.update(info.get("metadata", {}))
    return OperatorDataset(
        locations=arrays["locations"],
        values=arrays["values"],
        query_points=arrays["query_points"],
        targets=arrays["targets"],
        extras={
            k[len(EXTRA_PREFIX):]: v for k, v in arrays.items() if k.startswith(EXTRA_PREFIX)
        },
        metadata=merged,
    )
