import json
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from core.errors import ConfigError, InvariantViolation
from ledger import GENESIS, RunLedger, digest, plain, read_ledger


class PlainTest(unittest.TestCase):
    def test_numpy_values_become_json(self):
        value = plain({"mu": np.float64(12.5), "grid": np.array([3.8, 3.9]), "ok": np.bool_(True), "gap": math.nan})
        self.assertEqual(value, {"mu": 12.5, "grid": [3.8, 3.9], "ok": True, "gap": None})
        self.assertEqual(digest({"a": 1, "b": 2}), digest({"b": 2, "a": 1}))


class RunLedgerTest(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()
        self.path = Path(self.temp_dir.name) / "ledger.jsonl"

    def tearDown(self):
        self.temp_dir.cleanup()

    def test_hash_chain(self):
        ledger = RunLedger(self.path)
        first = ledger.append("solve", "c" * 64, {"mu": np.float64(20.5)})
        second = ledger.append("sweep", "c" * 64, {"sup_ratio": 3.0})
        self.assertEqual(first["prev_hash"], GENESIS)
        self.assertEqual(second["prev_hash"], first["record_hash"])
        records = read_ledger(self.path)
        self.assertEqual([r["experiment"] for r in records], ["solve", "sweep"])
        self.assertNotIn("timestamp", records[0])

    def test_same_outputs_give_identical_files(self):
        other = Path(self.temp_dir.name) / "other.jsonl"
        for path in (self.path, other):
            RunLedger(path).append("export-mesh", "c" * 64, {"num_nodes": 10, "h": 0.1})
        self.assertEqual(self.path.read_bytes(), other.read_bytes())

    def test_timestamps_are_optional(self):
        record = RunLedger(self.path, timestamps=True).append("solve", "c" * 64, {})
        self.assertIn("timestamp", record)
        self.assertEqual(len(read_ledger(self.path)), 1)

    def test_tampering_breaks_the_chain(self):
        ledger = RunLedger(self.path)
        ledger.append("solve", "c" * 64, {"mu": 20.5})
        ledger.append("solve", "c" * 64, {"mu": 21.0})
        lines = self.path.read_text(encoding="utf-8").splitlines()
        record = json.loads(lines[0])
        record["outputs"]["mu"] = 19.0
        lines[0] = json.dumps(record)
        self.path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with self.assertRaises(InvariantViolation):
            read_ledger(self.path)

    def test_missing_or_malformed_file(self):
        with self.assertRaises(ConfigError):
            read_ledger(self.path)
        self.path.write_text("{not json\n", encoding="utf-8")
        with self.assertRaises(ConfigError):
            read_ledger(self.path)


if __name__ == "__main__":
    unittest.main()
