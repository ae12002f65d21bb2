import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import Mock, patch

from feishu import FeishuNotifier


class FeishuNotifierTest(unittest.TestCase):
    def setUp(self):
        self.summary = {
            "experiment": "sweep",
            "status": "ok",
            "config_hash": "c" * 64,
            "output_hash": "a" * 64,
            "headline": {"μ": "12.5"},
        }

    @staticmethod
    def _successful_response():
        response = Mock()
        response.raise_for_status.return_value = None
        response.json.return_value = {"code": 0, "msg": "success"}
        return response

    def test_disabled_without_webhook(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            with patch.dict(os.environ, {}, clear=True):
                notifier = FeishuNotifier(history_file=str(Path(temp_dir) / "history.txt"))
            with patch("feishu.requests.post") as post:
                notifier.notify(self.summary)
            self.assertFalse(notifier.enabled)
            post.assert_not_called()

    def test_comma_separated_webhooks_receive_the_same_summary(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            notifier = FeishuNotifier(
                webhook_url="https://example.com/one, https://example.com/two",
                history_file=str(Path(temp_dir) / "history.txt"),
            )
            with patch("feishu.requests.post", return_value=self._successful_response()) as post:
                notifier.notify(self.summary)

            self.assertEqual(
                [call.args[0] for call in post.call_args_list],
                ["https://example.com/one", "https://example.com/two"],
            )
            text = post.call_args_list[0].kwargs["json"]["content"]["text"]
            self.assertIn("sweep", text)
            self.assertIn("a" * 12, text)
            self.assertIn("μ: 12.5", text)
            self.assertIn(self.summary["output_hash"], notifier.sent_hashes)

    def test_same_output_hash_is_sent_once(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            history = Path(temp_dir) / "history.txt"
            notifier = FeishuNotifier(webhook_url="https://example.com/one", history_file=str(history))
            with patch("feishu.requests.post", return_value=self._successful_response()) as post:
                notifier.notify(self.summary)
                notifier.notify(self.summary)
            post.assert_called_once()

            reloaded = FeishuNotifier(webhook_url="https://example.com/one", history_file=str(history))
            self.assertIn(self.summary["output_hash"], reloaded.sent_hashes)

    def test_history_is_not_written_when_any_webhook_fails(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            history = Path(temp_dir) / "history.txt"
            failed = self._successful_response()
            failed.json.return_value = {"code": 1, "msg": "failed"}
            notifier = FeishuNotifier(
                webhook_url="https://example.com/one,https://example.com/two",
                history_file=str(history),
            )
            with patch("feishu.requests.post", side_effect=[self._successful_response(), failed]):
                with self.assertRaises(RuntimeError):
                    notifier.notify(self.summary)

            self.assertNotIn(self.summary["output_hash"], notifier.sent_hashes)
            self.assertFalse(history.exists())

    def test_summary_without_hash_is_rejected(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            notifier = FeishuNotifier(
                webhook_url="https://example.com/one", history_file=str(Path(temp_dir) / "history.txt")
            )
            with self.assertRaises(ValueError):
                notifier.notify({"experiment": "solve"})


if __name__ == "__main__":
    unittest.main()
