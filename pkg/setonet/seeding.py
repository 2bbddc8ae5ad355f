"""
随机数流
每个样本由 (主种子, 划分, 样本序号) 派生独立的随机数流，串行与并行生成结果一致
"""

import numpy as np

SPLIT_STREAMS = {"train": 0, "test": 1}


def sample_rng(seed: int, split: str, index: int) -> np.random.Generator:
    """单个样本的随机数生成器"""
    return np.random.default_rng([int(seed), SPLIT_STREAMS.get(split, 2), int(index)])


def stream_rng(seed: int, *stream: int) -> np.random.Generator:
    """按任意整数路径派生随机数生成器"""
    return np.random.default_rng([int(seed), *[int(s) for s in stream]])
