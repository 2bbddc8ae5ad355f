"""
运行记录数据库模块
提供 SQLite 连接管理和基础操作，保存训练运行与评估指标
"""

import logging
import sqlite3
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Tuple

logger = logging.getLogger(__name__)


def adapt_datetime(val):
    return val.isoformat(" ")


sqlite3.register_adapter(datetime, adapt_datetime)


class Database:
    """数据库连接管理"""

    def __init__(self, db_path: str):
        """初始化数据库连接

        Args:
            db_path: 数据库文件路径，":memory:" 表示内存数据库
        """
        self.db_path = db_path
        self.conn: Optional[sqlite3.Connection] = None
        self._ensure_db_dir()
        self._connect()

    def _ensure_db_dir(self):
        """确保数据库目录存在"""
        if self.db_path == ":memory:":
            return
        Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)

    def _connect(self):
        """建立数据库连接"""
        try:
            self.conn = sqlite3.connect(self.db_path, check_same_thread=False)
            self.conn.row_factory = sqlite3.Row
            logger.debug("数据库连接成功: %s", self.db_path)
        except Exception as e:
            logger.exception("数据库连接失败: %s", e)
            raise

    def init_db(self):
        """初始化数据库表结构"""
        try:
            self.execute(
                """
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                name TEXT NOT NULL UNIQUE,
                benchmark TEXT NOT NULL,
                variant TEXT NOT NULL,
                protocol TEXT NOT NULL CHECK(protocol IN ('fixed', 'variable', 'dropoff')),
                seed INTEGER NOT NULL,
                config TEXT NOT NULL,
                checkpoint TEXT,
                status TEXT NOT NULL DEFAULT 'created',
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
            """
            )

            # 指标只追加，不更新
            self.execute(
                """
            CREATE TABLE IF NOT EXISTS metrics (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                step INTEGER NOT NULL CHECK(step >= 0),
                test_mse REAL NOT NULL CHECK(test_mse >= 0),
                rel_l2 REAL NOT NULL CHECK(rel_l2 >= 0),
                train_loss REAL,
                wall_clock REAL NOT NULL DEFAULT 0,
                seed INTEGER NOT NULL,
                FOREIGN KEY (run_id) REFERENCES runs(id) ON DELETE CASCADE
            )
            """
            )

            self.execute("CREATE INDEX IF NOT EXISTS idx_metrics_run ON metrics(run_id)")
            self.execute(
                "CREATE INDEX IF NOT EXISTS idx_runs_group ON runs(benchmark, variant, protocol)"
            )
            self.execute("PRAGMA foreign_keys = ON")

            self.commit()
            logger.debug("数据库表结构初始化完成")

        except Exception as e:
            logger.exception("数据库初始化失败: %s", e)
            self.rollback()
            raise

    def close(self):
        """关闭数据库连接"""
        if self.conn:
            self.conn.close()
            self.conn = None

    def execute(self, sql: str, params: Tuple = ()) -> int:
        """执行 SQL 语句

        Args:
            sql: SQL 语句
            params: 参数元组

        Returns:
            影响的行数或新插入记录的 ID
        """
        if not self.conn:
            raise RuntimeError("数据库连接未建立")

        try:
            cursor = self.conn.cursor()
            cursor.execute(sql, params)

            if sql.strip().upper().startswith("INSERT"):
                return cursor.lastrowid

            return cursor.rowcount

        except Exception as e:
            logger.error("SQL 执行失败: %s (%s)", sql.strip(), e)
            raise

    def fetchall(self, sql: str, params: Tuple = ()) -> List[sqlite3.Row]:
        if not self.conn:
            raise RuntimeError("数据库连接未建立")
        cursor = self.conn.cursor()
        cursor.execute(sql, params)
        return cursor.fetchall()

    def fetchone(self, sql: str, params: Tuple = ()) -> Optional[sqlite3.Row]:
        if not self.conn:
            raise RuntimeError("数据库连接未建立")
        cursor = self.conn.cursor()
        cursor.execute(sql, params)
        return cursor.fetchone()

    def begin_transaction(self):
        """开始事务"""
        if not self.conn:
            raise RuntimeError("数据库连接未建立")
        self.execute("BEGIN")

    def commit(self):
        if self.conn:
            self.conn.commit()

    def rollback(self):
        if self.conn:
            self.conn.rollback()


def get_default_db_path(output_dir: str) -> str:
    """输出目录下的默认数据库路径"""
    return str(Path(output_dir) / "runs.db")
