# coding: utf-8
"""
CSV 结果导出模块
多种子汇总表（均值 ± 标准差）与传感器数量消融表
"""
import csv
import logging
from collections import defaultdict
from io import StringIO
from typing import Dict, List, Optional, Sequence

import numpy as np

from .database import Database
from .metrics_manager import MetricsManager
from .models import TrainRunConfig
from .run_manager import RunManager
from .training import aggregate_seeds

SUMMARY_HEADER = [
    "benchmark",
    "variant",
    "protocol",
    "rel_l2_mean",
    "rel_l2_std",
    "mse_mean",
    "mse_std",
    "n_seeds",
]
ABLATION_HEADER = ["count", "mse_mean", "mse_std", "rel_l2_mean", "rel_l2_std", "n_seeds"]


def aggregate_ablation(per_seed: Sequence[Sequence[Dict]]) -> List[Dict]:
    """按传感器数量汇总各种子的消融结果

    Args:
        per_seed: 每个种子一组 {count, mse, rel_l2} 行

    Returns:
        按 count 升序的汇总行
    """
    grouped = defaultdict(list)
    for rows in per_seed:
        for row in rows:
            grouped[int(row["count"])].append(row)

    summary = []
    for count in sorted(grouped):
        mse = np.array([r["mse"] for r in grouped[count]], dtype=np.float64)
        rel = np.array([r["rel_l2"] for r in grouped[count]], dtype=np.float64)
        summary.append(
            {
                "count": count,
                "mse_mean": float(mse.mean()),
                "mse_std": float(mse.std()),
                "rel_l2_mean": float(rel.mean()),
                "rel_l2_std": float(rel.std()),
                "n_seeds": len(mse),
            }
        )
    return summary


class SummaryExporter:
    """结果表导出器"""

    def __init__(self, db: Optional[Database] = None):
        """初始化导出器

        Args:
            db: 运行记录数据库（只导出给定行时可为 None）
        """
        self.db = db
        self.run_mgr = RunManager(db) if db is not None else None
        self.metrics_mgr = MetricsManager(db) if db is not None else None

    def collect_summary(self, benchmark: Optional[str] = None) -> List[Dict]:
        """从运行记录汇总已完成的运行，每个 (基准, 变体, 协议) 一行"""
        if self.run_mgr is None:
            raise RuntimeError("未连接运行记录数据库")

        groups = defaultdict(list)
        for run in self.run_mgr.list_runs(benchmark=benchmark):
            if run.status != "finished":
                continue
            final = self.metrics_mgr.get_final_record(run.id)
            if final is None:
                continue
            key = (run.benchmark, run.variant, run.protocol)
            groups[key].append((TrainRunConfig.from_dict(run.config), final))

        return [aggregate_seeds(groups[key]) for key in sorted(groups)]

    def export_summary_to_csv(self, rows: List[Dict], filepath: str) -> bool:
        """导出汇总表到 CSV 文件

        Returns:
            导出是否成功
        """
        return self._write(filepath, self.summary_to_string(rows), len(rows))

    def summary_to_string(self, rows: List[Dict]) -> str:
        return self._generate_csv_content(
            SUMMARY_HEADER,
            [
                [
                    r["benchmark"],
                    r["variant"],
                    r["protocol"],
                    f"{r['rel_l2_mean']:.6e}",
                    f"{r['rel_l2_std']:.6e}",
                    f"{r['mse_mean']:.6e}",
                    f"{r['mse_std']:.6e}",
                    r["n_seeds"],
                ]
                for r in rows
            ],
        )

    def export_ablation_to_csv(self, rows: List[Dict], filepath: str) -> bool:
        """导出传感器数量消融表"""
        return self._write(filepath, self.ablation_to_string(rows), len(rows))

    def ablation_to_string(self, rows: List[Dict]) -> str:
        return self._generate_csv_content(
            ABLATION_HEADER,
            [
                [
                    r["count"],
                    f"{r['mse_mean']:.6e}",
                    f"{r['mse_std']:.6e}",
                    f"{r['rel_l2_mean']:.6e}",
                    f"{r['rel_l2_std']:.6e}",
                    r["n_seeds"],
                ]
                for r in rows
            ],
        )

    def _write(self, filepath: str, content: str, n_rows: int) -> bool:
        if n_rows == 0:
            logging.getLogger(__name__).info("没有数据可导出")
            return False
        try:
            # UTF-8 BOM 便于表格软件识别
            with open(filepath, "w", encoding="utf-8-sig", newline="") as file:
                file.write(content)
            logging.getLogger(__name__).info("成功导出 %d 行到 %s", n_rows, filepath)
            return True
        except Exception as e:
            logging.getLogger(__name__).exception("导出失败: %s", e)
            return False

    @staticmethod
    def _generate_csv_content(header: List[str], rows: List[List]) -> str:
        output = StringIO()
        writer = csv.writer(output)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
        return output.getvalue()
