"""
弹性板数据加载模块
校验外部数据文件，按全局统计量标准化场数据（坐标不缩放），并提供逆变换
"""

import logging
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .errors import DatasetFormatError
from .models import OperatorDataset

N_SENSORS = 301
N_NODES = 1048

REQUIRED_KEYS = (
    "train_loads",
    "test_loads",
    "train_displacement",
    "test_displacement",
    "edge_y",
    "nodes",
)


def validate_file(
    path: str, n_sensors: int = N_SENSORS, n_nodes: int = N_NODES
) -> Tuple[bool, List[str]]:
    """验证弹性板数据文件

    Args:
        path: .npz 文件路径
        n_sensors: 期望的边界载荷传感器数
        n_nodes: 期望的网格节点数

    Returns:
        (是否有效, 错误信息列表)
    """
    errors = []
    logger = logging.getLogger(__name__)

    try:
        with np.load(path, allow_pickle=False) as bundle:
            missing = [k for k in REQUIRED_KEYS if k not in bundle.files]
            if missing:
                errors.append(f"缺少必需的数组: {', '.join(missing)}")
                return False, errors

            shapes = {k: bundle[k].shape for k in REQUIRED_KEYS}
    except FileNotFoundError:
        errors.append("文件不存在")
        return False, errors
    except Exception as e:
        logger.exception("validate_file 读取文件出错: %s", e)
        errors.append(f"文件读取错误: {str(e)}")
        return False, errors

    if shapes["edge_y"] != (n_sensors,):
        errors.append(f"edge_y 形状应为 ({n_sensors},)，实际为 {shapes['edge_y']}")
    if shapes["nodes"] != (n_nodes, 2):
        errors.append(f"nodes 形状应为 ({n_nodes}, 2)，实际为 {shapes['nodes']}")
    for split in ("train", "test"):
        loads = shapes[f"{split}_loads"]
        disp = shapes[f"{split}_displacement"]
        if len(loads) != 2 or loads[1] != n_sensors:
            errors.append(f"{split}_loads 形状应为 (N, {n_sensors})，实际为 {loads}")
        if len(disp) != 2 or disp[1] != n_nodes:
            errors.append(f"{split}_displacement 形状应为 (N, {n_nodes})，实际为 {disp}")
        if len(loads) == 2 and len(disp) == 2 and loads[0] != disp[0]:
            errors.append(f"{split} 划分的载荷与位移样本数不一致")

    return len(errors) == 0, errors


def standardization_stats(train_loads: np.ndarray, train_disp: np.ndarray) -> Dict[str, float]:
    """训练集上的全局均值与标准差"""
    return {
        "input_mean": float(train_loads.mean()),
        "input_std": float(train_loads.std()),
        "target_mean": float(train_disp.mean()),
        "target_std": float(train_disp.std()),
    }


def standardize(values: np.ndarray, stats: Dict[str, float], kind: str) -> np.ndarray:
    """标准化，kind 为 input 或 target"""
    return (values - stats[f"{kind}_mean"]) / stats[f"{kind}_std"]


def destandardize(values: np.ndarray, stats: Dict[str, float], kind: str) -> np.ndarray:
    """逆标准化"""
    return values * stats[f"{kind}_std"] + stats[f"{kind}_mean"]


def load_elastic_dataset(
    path: str, n_sensors: int = N_SENSORS, n_nodes: int = N_NODES
) -> Dict[str, OperatorDataset]:
    """加载并标准化弹性板数据

    Args:
        path: .npz 文件路径

    Returns:
        {"train": 训练集, "test": 测试集}，标准化统计量记录在 metadata["normalization"]

    Raises:
        DatasetFormatError: 文件格式错误或形状与基准卡片不符
    """
    is_valid, errors = validate_file(path, n_sensors, n_nodes)
    if not is_valid:
        raise DatasetFormatError("; ".join(errors))

    with np.load(path, allow_pickle=False) as bundle:
        arrays = {k: np.asarray(bundle[k], dtype=np.float64) for k in REQUIRED_KEYS}

    stats = standardization_stats(arrays["train_loads"], arrays["train_displacement"])
    if stats["input_std"] == 0 or stats["target_std"] == 0:
        raise DatasetFormatError("训练数据方差为零，无法标准化")

    locations = arrays["edge_y"].reshape(1, n_sensors, 1)
    queries = arrays["nodes"].reshape(1, n_nodes, 2)
    splits = {}
    for split in ("train", "test"):
        loads = standardize(arrays[f"{split}_loads"], stats, "input")
        disp = standardize(arrays[f"{split}_displacement"], stats, "target")
        splits[split] = OperatorDataset(
            locations=locations,
            values=loads[..., None],
            query_points=queries,
            targets=disp[..., None],
            # 完整输入网格即边界上的 301 个点
            extras={"input_grid_values": loads},
            metadata={
                "normalization": stats,
                "source": str(Path(path).name),
                "input_grid": arrays["edge_y"].reshape(-1).tolist(),
            },
        )

    logging.getLogger(__name__).info(
        "弹性板数据加载完成: 训练 %d, 测试 %d", len(splits["train"]), len(splits["test"])
    )
    return splits
