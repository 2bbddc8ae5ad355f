#!/usr/bin/env python3
"""
SetONet 算子学习实验 - 主程序入口
"""
import sys
from pathlib import Path

# 添加项目根目录到Python路径
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

# pylint: disable=wrong-import-position
from setonet.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
