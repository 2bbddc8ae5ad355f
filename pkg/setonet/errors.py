"""
异常类型定义
统一的错误层级，命令行根据类型映射退出码
"""

from typing import Any, Dict, Optional


class SetONetError(Exception):
    """所有错误的基类"""


class ConfigValidationError(SetONetError, ValueError):
    """配置参数校验失败"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class ProtocolMismatchError(ConfigValidationError):
    """传感器协议与模型或基准不匹配"""


class NumericalFailure(SetONetError, RuntimeError):
    """数值过程失败（牛顿迭代、Cholesky、Sinkhorn、非有限损失、UAT 校验）"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.details = details or {}


class DatasetFormatError(SetONetError, OSError):
    """数据集文件格式、版本或校验和错误"""


EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4
# 未分类的内部错误
EXIT_INTERNAL = 1


def exit_code_for(error: BaseException) -> int:
    """根据异常类型返回命令行退出码"""
    if isinstance(error, ConfigValidationError):
        return EXIT_VALIDATION
    if isinstance(error, NumericalFailure):
        return EXIT_NUMERICAL
    if isinstance(error, (DatasetFormatError, OSError)):
        return EXIT_IO
    if isinstance(error, ValueError):
        return EXIT_VALIDATION
    return EXIT_INTERNAL
