"""
运行账本：只追加的 JSON lines 文件

每条记录包含 schema 版本、配置哈希、模块输出、输出哈希和上一条记录的哈希（哈希链）。
写入通过同一把锁串行化，工作线程只返回结果，由主线程写账本。
"""

from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional
import hashlib
import json
import math
import threading

import numpy as np

from core.errors import ConfigError, InvariantViolation

SCHEMA_VERSION = 1
GENESIS = "0" * 64


def plain(value):
    """把 numpy 标量、数组与元组转成可 JSON 序列化的对象；非有限浮点数记为 null"""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [plain(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def canonical(value) -> str:
    return json.dumps(plain(value), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def digest(value) -> str:
    return hashlib.sha256(canonical(value).encode("utf-8")).hexdigest()


class RunLedger:
    """运行账本"""

    def __init__(self, path, timestamps: bool = False):
        """
        Args:
            path: 账本文件路径
            timestamps: 是否写入时间戳；关闭时相同配置的账本逐字节一致
        """
        self.path = Path(path)
        self.timestamps = timestamps
        self._lock = threading.Lock()

    def records(self) -> List[Dict]:
        return read_ledger(self.path) if self.path.exists() else []

    def last_hash(self) -> str:
        records = self.records()
        return records[-1]["record_hash"] if records else GENESIS

    def append(self, experiment: str, config_hash: str, outputs: Dict) -> Dict:
        """
        追加一条记录

        Returns:
            写入的记录（含 output_hash 与 record_hash）
        """
        with self._lock:
            outputs = plain(outputs)
            record = {
                "schema": SCHEMA_VERSION,
                "experiment": experiment,
                "config_hash": config_hash,
                "outputs": outputs,
                "output_hash": digest(outputs),
                "prev_hash": self.last_hash(),
            }
            if self.timestamps:
                record["timestamp"] = datetime.now(timezone.utc).isoformat()
            record["record_hash"] = digest(record)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(canonical(record) + "\n")
            print(f"[账本] {self.path.name} 追加 {experiment} 记录 {record['output_hash'][:12]}")
            return record


def read_ledger(path) -> List[Dict]:
    """读取账本并校验哈希链；文件缺失抛出 ConfigError，链断裂抛出 InvariantViolation"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"账本文件不存在: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}:{number} 不是合法的 JSON: {e}")
    verify_chain(records, path)
    return records


def verify_chain(records: List[Dict], source: Optional[Path] = None) -> None:
    previous = GENESIS
    for index, record in enumerate(records):
        body = {k: v for k, v in record.items() if k != "record_hash"}
        if record.get("prev_hash") != previous or digest(body) != record.get("record_hash"):
            raise InvariantViolation(f"账本 {source or ''} 第 {index + 1} 条记录的哈希链断裂")
        previous = record["record_hash"]
