"""
运行管理模块
提供训练运行记录的增删查与状态更新
"""

import json
import logging
from datetime import datetime
from typing import List, Optional

from .database import Database
from .models import PROTOCOLS, RunRecord, TrainRunConfig

RUN_STATUSES = ("created", "running", "finished", "failed")


class RunManager:
    """运行管理器"""

    def __init__(self, db: Database):
        """初始化运行管理器

        Args:
            db: 数据库连接实例
        """
        self.db = db

    def create_run(
        self, name: str, cfg: TrainRunConfig, seed: int, checkpoint: Optional[str] = None
    ) -> RunRecord:
        """创建新运行

        Args:
            name: 运行名称（唯一）
            cfg: 训练配置
            seed: 种子
            checkpoint: 检查点路径

        Returns:
            新创建的运行记录

        Raises:
            ValueError: 名称已存在或协议非法
        """
        if self.get_run_by_name(name):
            raise ValueError(f"运行名 '{name}' 已存在")
        if cfg.protocol not in PROTOCOLS:
            raise ValueError(f"未知的传感器协议: {cfg.protocol}")

        try:
            run_id = self.db.execute(
                """INSERT INTO runs
                   (name, benchmark, variant, protocol, seed, config, checkpoint, status, created_at)
                   VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)""",
                (
                    name,
                    cfg.benchmark,
                    cfg.variant,
                    cfg.protocol,
                    int(seed),
                    json.dumps(cfg.to_dict(), ensure_ascii=False),
                    checkpoint,
                    "created",
                    datetime.now(),
                ),
            )
            self.db.commit()
            return self.get_run(run_id)

        except Exception as e:
            self.db.rollback()
            raise RuntimeError(f"创建运行失败: {e}")

    def _row_to_run(self, row) -> RunRecord:
        return RunRecord(
            id=row["id"],
            name=row["name"],
            benchmark=row["benchmark"],
            variant=row["variant"],
            protocol=row["protocol"],
            seed=row["seed"],
            config=json.loads(row["config"]),
            checkpoint=row["checkpoint"],
            status=row["status"],
            created_at=(
                datetime.fromisoformat(row["created_at"]) if row["created_at"] else None
            ),
        )

    def get_run(self, run_id: int) -> Optional[RunRecord]:
        row = self.db.fetchone("SELECT * FROM runs WHERE id = ?", (run_id,))
        return self._row_to_run(row) if row else None

    def get_run_by_name(self, name: str) -> Optional[RunRecord]:
        row = self.db.fetchone("SELECT * FROM runs WHERE name = ?", (name,))
        return self._row_to_run(row) if row else None

    def list_runs(
        self,
        benchmark: Optional[str] = None,
        variant: Optional[str] = None,
        protocol: Optional[str] = None,
    ) -> List[RunRecord]:
        """按条件列出运行

        Returns:
            运行列表，按种子与 ID 排序
        """
        where_conditions = []
        params = []
        if benchmark:
            where_conditions.append("benchmark = ?")
            params.append(benchmark)
        if variant:
            where_conditions.append("variant = ?")
            params.append(variant)
        if protocol:
            where_conditions.append("protocol = ?")
            params.append(protocol)

        where = f"WHERE {' AND '.join(where_conditions)}" if where_conditions else ""
        # Safe: where_conditions contains static strings with placeholders
        rows = self.db.fetchall(
            f"SELECT * FROM runs {where} ORDER BY seed ASC, id ASC", tuple(params)  # nosec
        )
        return [self._row_to_run(row) for row in rows]

    def update_status(
        self, run_id: int, status: str, checkpoint: Optional[str] = None
    ) -> bool:
        """更新运行状态

        Raises:
            ValueError: 状态非法
        """
        if status not in RUN_STATUSES:
            raise ValueError(f"未知的运行状态: {status}")

        try:
            if checkpoint is not None:
                rows_affected = self.db.execute(
                    "UPDATE runs SET status = ?, checkpoint = ? WHERE id = ?",
                    (status, checkpoint, run_id),
                )
            else:
                rows_affected = self.db.execute(
                    "UPDATE runs SET status = ? WHERE id = ?", (status, run_id)
                )
            self.db.commit()
            return rows_affected > 0

        except Exception as e:
            self.db.rollback()
            logging.getLogger(__name__).exception("更新运行状态失败: %s", e)
            return False

    def delete_run(self, run_id: int) -> bool:
        """删除运行，关联指标级联删除"""
        try:
            rows_affected = self.db.execute("DELETE FROM runs WHERE id = ?", (run_id,))
            self.db.commit()
            return rows_affected > 0

        except Exception as e:
            self.db.rollback()
            logging.getLogger(__name__).exception("删除运行失败: %s", e)
            return False

    def get_run_count(self) -> int:
        row = self.db.fetchone("SELECT COUNT(*) as count FROM runs")
        return row["count"] if row else 0
