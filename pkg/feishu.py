"""飞书通知器实现

实验结束后把运行摘要推送到飞书机器人，并维护已推送的 output_hash 历史以防止重复推送。
未配置 FEISHU_WEBHOOK_URL 时通知器处于禁用状态，notify 静默跳过。
"""

import os
from pathlib import Path
from typing import List, Optional, Set

import dotenv
import requests

from core.interface import Notifier

dotenv.load_dotenv()


class FeishuNotifier(Notifier):
    """飞书运行摘要通知器"""

    def __init__(
        self,
        webhook_url: Optional[str] = None,
        history_file: str = "feishu_sent_history.txt",
        timeout: int = 10,
    ):
        """
        初始化飞书通知器

        Args:
            webhook_url: 飞书机器人 Webhook URL，多个 URL 使用英文逗号分隔；
                如果为 None 则从环境变量 FEISHU_WEBHOOK_URL 读取
            history_file: 已推送 output_hash 的历史文件，每行一个
            timeout: 请求超时时间（秒）
        """
        webhook_value = webhook_url or os.getenv("FEISHU_WEBHOOK_URL")
        self.webhook_urls = self._parse_webhook_urls(webhook_value)
        self.enabled = bool(self.webhook_urls)
        self.history_file = Path(history_file)
        self.timeout = timeout
        self.sent_hashes: Set[str] = self._load_history() if self.enabled else set()

    def notify(self, summary: dict) -> None:
        """
        推送一次运行的摘要

        Args:
            summary: 至少包含 experiment 与 output_hash
        """
        if not self.enabled:
            return
        output_hash = summary.get("output_hash")
        if not output_hash:
            raise ValueError("摘要缺少 output_hash")
        if output_hash in self.sent_hashes:
            return

        message = self._build_message(summary)
        failures = []
        for index, webhook_url in enumerate(self.webhook_urls, 1):
            try:
                self._send_message(webhook_url, message)
            except (requests.RequestException, RuntimeError, ValueError) as exc:
                print(f"[失败] 第 {index} 个 Webhook 推送失败: {exc}")
                failures.append(index)

        if failures:
            raise RuntimeError(f"部分飞书 Webhook 推送失败，序号: {', '.join(map(str, failures))}")

        # 所有 Webhook 成功后才记录
        self.sent_hashes.add(output_hash)
        self._save_history(output_hash)
        print(f"[成功] 已推送到 {len(self.webhook_urls)} 个 Webhook: {summary.get('experiment')} {output_hash[:12]}")

    @staticmethod
    def _parse_webhook_urls(webhook_value: Optional[str]) -> List[str]:
        """解析逗号分隔的 Webhook，保持顺序去重"""
        if not webhook_value:
            return []
        return list(dict.fromkeys(url.strip() for url in webhook_value.split(",") if url.strip()))

    def _send_message(self, webhook_url: str, message: dict) -> None:
        response = requests.post(webhook_url, json=message, timeout=self.timeout)
        response.raise_for_status()
        result = response.json()
        if result.get("code") != 0:
            raise RuntimeError(f"飞书 API 返回错误: {result.get('msg')}")

    @staticmethod
    def _build_message(summary: dict) -> dict:
        """飞书文本消息：实验名、状态、哈希与若干结果行"""
        lines = [
            f"hslab 实验完成: {summary.get('experiment')}",
            "",
            f"状态: {summary.get('status', 'ok')}",
            f"配置哈希: {str(summary.get('config_hash', ''))[:12]}",
            f"输出哈希: {str(summary.get('output_hash'))[:12]}",
        ]
        if summary.get("out_dir"):
            lines.append(f"输出目录: {summary['out_dir']}")
        for key, value in summary.get("headline", {}).items():
            lines.append(f"{key}: {value}")
        return {"msg_type": "text", "content": {"text": "\n".join(lines)}}

    def _load_history(self) -> Set[str]:
        if not self.history_file.exists():
            return set()
        try:
            with open(self.history_file, "r", encoding="utf-8") as f:
                hashes = set(line.strip() for line in f if line.strip())
                print(f"[加载] 已加载 {len(hashes)} 条历史推送记录")
                return hashes
        except IOError as e:
            print(f"[警告] 加载历史记录失败: {e}，使用空记录")
            return set()

    def _save_history(self, hash_to_add: str) -> None:
        try:
            self.history_file.parent.mkdir(parents=True, exist_ok=True)
            with open(self.history_file, "a", encoding="utf-8") as f:
                f.write(f"{hash_to_add}\n")
        except IOError as e:
            print(f"[错误] 保存历史记录失败: {e}")

    def get_stats(self) -> dict:
        return {
            "enabled": self.enabled,
            "total_sent": len(self.sent_hashes),
            "history_file": str(self.history_file),
        }
