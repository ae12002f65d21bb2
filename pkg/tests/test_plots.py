import math
import tempfile
import unittest
from pathlib import Path

import plots


class CsvTest(unittest.TestCase):
    def test_header_and_columns(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = plots.write_csv(
                Path(temp_dir) / "greens.csv",
                "greens",
                [{"h": 0.1, "g5": 0.05, "g6": 1.0, "g7": math.nan, "g8": 2.0}],
            )
            lines = path.read_text(encoding="utf-8").splitlines()
            self.assertEqual(lines[0], f"# schema={plots.CSV_SCHEMA_VERSION} table=greens")
            self.assertEqual(lines[1], "h,g5,g6,g7,g8")
            row = plots.read_csv(path)[0]
        self.assertEqual(row["g5"], 0.05)
        # 非有限值写成空单元格
        self.assertEqual(row["g7"], "")

    def test_booleans_and_missing_columns(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = plots.write_csv(Path(temp_dir) / "scan.csv", "scan", [{"kappa": -1.0, "below_half": True}])
            row = plots.read_csv(path)[0]
        self.assertEqual(row["below_half"], 1.0)
        self.assertEqual(row["mu"], "")

    def test_unknown_table(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            with self.assertRaises(ValueError):
                plots.write_csv(Path(temp_dir) / "x.csv", "spectrum", [])


class SvgTest(unittest.TestCase):
    def test_same_data_gives_same_file(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            paths = [
                plots.line_plot(Path(temp_dir) / f"{name}.svg", [1, 2, 3], {"μ": [3.0, 2.0, 1.5]}, "p", "μ")
                for name in ("a", "b")
            ]
            self.assertEqual(paths[0].read_bytes(), paths[1].read_bytes())
            self.assertIn(b"<svg", paths[0].read_bytes())


if __name__ == "__main__":
    unittest.main()
