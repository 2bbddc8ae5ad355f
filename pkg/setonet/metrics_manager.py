"""
指标管理模块
评估记录的追加与查询
"""

from typing import List, Optional

from .database import Database
from .models import MetricsRecord


class MetricsManager:
    """指标管理器"""

    def __init__(self, db: Database):
        """初始化指标管理器

        Args:
            db: 数据库连接实例
        """
        self.db = db

    def add_record(self, run_id: int, record: MetricsRecord) -> int:
        """追加一条评估记录

        Args:
            run_id: 运行 ID
            record: 评估记录

        Returns:
            新记录 ID

        Raises:
            ValueError: 指标为负或步数非法
        """
        if record.step < 0:
            raise ValueError("步数不能为负")
        if record.test_mse < 0 or record.rel_l2 < 0:
            raise ValueError("指标不能为负数")

        try:
            record_id = self.db.execute(
                """INSERT INTO metrics
                   (run_id, step, test_mse, rel_l2, train_loss, wall_clock, seed)
                   VALUES (?, ?, ?, ?, ?, ?, ?)""",
                (
                    run_id,
                    int(record.step),
                    float(record.test_mse),
                    float(record.rel_l2),
                    None if record.train_loss is None else float(record.train_loss),
                    float(record.wall_clock),
                    int(record.seed),
                ),
            )
            self.db.commit()
            return record_id

        except Exception as e:
            self.db.rollback()
            raise RuntimeError(f"添加评估记录失败: {e}")

    @staticmethod
    def _row_to_record(row) -> MetricsRecord:
        return MetricsRecord(
            step=row["step"],
            test_mse=row["test_mse"],
            rel_l2=row["rel_l2"],
            wall_clock=row["wall_clock"],
            seed=row["seed"],
            train_loss=row["train_loss"],
        )

    def get_records(self, run_id: int) -> List[MetricsRecord]:
        """运行的完整指标轨迹，按步数升序"""
        rows = self.db.fetchall(
            "SELECT * FROM metrics WHERE run_id = ? ORDER BY step ASC, id ASC", (run_id,)
        )
        return [self._row_to_record(row) for row in rows]

    def get_final_record(self, run_id: int) -> Optional[MetricsRecord]:
        row = self.db.fetchone(
            "SELECT * FROM metrics WHERE run_id = ? ORDER BY step DESC, id DESC LIMIT 1",
            (run_id,),
        )
        return self._row_to_record(row) if row else None

    def get_record_count(self, run_id: int) -> int:
        row = self.db.fetchone(
            "SELECT COUNT(*) as count FROM metrics WHERE run_id = ?", (run_id,)
        )
        return row["count"] if row else 0
