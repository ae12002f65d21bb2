import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import main
import plots
from core.errors import ConfigError, InvariantViolation
from ledger import read_ledger
from tests.test_halfspace import synthetic_bubble


class LoadConfigTest(unittest.TestCase):
    def test_defaults(self):
        with patch.dict(os.environ, {}, clear=True):
            config = main.load_config("solve")
        self.assertEqual(config.domain.n, 3)
        self.assertEqual(config.domain.kappa, -1.0)
        self.assertEqual(config.out_dir, "out")
        self.assertFalse(config.timestamps)

    def test_nested_sections_and_dotted_keys(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "config.yaml"
            path.write_text(
                "geometry:\n  kappa: 0.5\n  meridian_samples: 8\nsolver.p: 3.5\n",
                encoding="utf-8",
            )
            with patch.dict(os.environ, {}, clear=True):
                config = main.load_config("solve", str(path), {"geometry.kappa": 1.0})
        # 命令行覆盖优先于配置文件
        self.assertEqual(config.domain.kappa, 1.0)
        self.assertEqual(config.domain.meridian_samples, 8)
        self.assertEqual(config.solver["p"], 3.5)

    def test_unknown_keys(self):
        with patch.dict(os.environ, {}, clear=True):
            with self.assertRaises(ConfigError):
                main.load_config("solve", overrides={"geometry.curvature": 1.0})
            with self.assertRaises(ConfigError):
                main.load_config("solve", overrides={"mesh.samples": 8})
            with self.assertRaises(ConfigError):
                main.load_config("fit")

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            main.load_config("solve", "/nonexistent/hslab.yaml")

    def test_environment_output_dir(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            with patch.dict(os.environ, {"HSLAB_OUT_DIR": temp_dir, "HSLAB_THREADS": "3"}, clear=True):
                config = main.load_config("solve")
        self.assertEqual(config.out_dir, temp_dir)
        self.assertEqual(config.threads, 3)

    def test_invalid_parameters(self):
        cases = (
            {"geometry.s": 2.5},
            {"geometry.n": 2},
            {"solver.p": 4.5},
            {"sweep.gap_min": 0.3},
            {"sweep.p_grid": [3.5, 3.4]},
            {"halfspace.radius": 5.0},
            {"greens.depths": [1.5]},
            {"greens.parametrix_depth": 4},
            {"output.threads": 0},
        )
        with patch.dict(os.environ, {}, clear=True):
            for overrides in cases:
                with self.subTest(overrides=overrides):
                    with self.assertRaises(ConfigError):
                        main.load_config("solve", overrides=overrides)

    def test_headline_keeps_numeric_results(self):
        line = main.headline({"mu": 20.51234567, "bubble_count": 1, "sup_ratio": None, "rows": [], "blowup": True})
        self.assertEqual(line, {"mu": "20.5123", "bubble_count": "1"})

    def test_override_needs_equals_sign(self):
        self.assertEqual(main._parse_overrides(["geometry.kappa=-0.5"]), {"geometry.kappa": -0.5})
        with self.assertRaises(ConfigError):
            main._parse_overrides(["geometry.kappa"])


class MainTest(unittest.TestCase):
    def test_invalid_config_exits_before_compute(self):
        with patch.dict(os.environ, {}, clear=True):
            with patch("main.Lab") as lab:
                code = main.main(["solve", "--set", "geometry.s=2.5"])
        self.assertEqual(code, 2)
        lab.assert_not_called()

    def test_export_mesh_runs_are_reproducible(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            argv = ["export-mesh", "--out", temp_dir, "--set", "geometry.meridian_samples=8"]
            with patch.dict(os.environ, {}, clear=True):
                self.assertEqual(main.main(argv), 0)
                self.assertEqual(main.main(argv), 0)
            ledgers = list(Path(temp_dir).glob("export-mesh_*/ledger.jsonl"))
            self.assertEqual(len(ledgers), 1)
            first, second = read_ledger(ledgers[0])
            self.assertEqual(first["output_hash"], second["output_hash"])
            self.assertEqual(first["config_hash"], second["config_hash"])
            self.assertEqual(second["prev_hash"], first["record_hash"])
            self.assertTrue((ledgers[0].parent / "mesh.txt").exists())

            rows = main.report([str(ledgers[0])])
            self.assertEqual(
                set(rows[0]),
                {"ledger", "experiment", "mean_curvature", "sup_trend", "bubble_count", "mu_trend"},
            )
            self.assertEqual(rows[0]["experiment"], "export-mesh")

    def test_run_sends_headline_to_notifier(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            with patch.dict(os.environ, {}, clear=True):
                config = main.load_config("export-mesh", overrides={"output.dir": temp_dir, "geometry.meridian_samples": 8})
            with patch("main.FeishuNotifier") as notifier_class:
                code, record = main.run(config)
        self.assertEqual(code, 0)
        summary = notifier_class.return_value.notify.call_args.args[0]
        self.assertEqual(summary["output_hash"], record["output_hash"])
        self.assertEqual(summary["headline"]["num_nodes"], str(record["outputs"]["num_nodes"]))

    def test_sweep_writes_one_row_per_grid_point(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            argv = [
                "sweep",
                "--out",
                temp_dir,
                "--set",
                "geometry.meridian_samples=8",
                "--set",
                "sweep.p_grid=[3.8, 3.9]",
            ]
            with patch.dict(os.environ, {}, clear=True):
                self.assertEqual(main.main(argv), 0)
            (table,) = Path(temp_dir).glob("sweep_*/sweep.csv")
            rows = plots.read_csv(table)
        self.assertEqual([row["p"] for row in rows], [3.8, 3.9])
        self.assertTrue(all(row["mu"] > 0 for row in rows))

    def test_failed_decay_gate_exits_with_invariant_code(self):
        bubble = synthetic_bubble(decay_exponent=0.0)
        with tempfile.TemporaryDirectory() as temp_dir:
            with patch.dict(os.environ, {}, clear=True):
                with patch("halfspace.solve_halfspace", return_value=bubble):
                    code = main.main(["halfspace", "--out", temp_dir])
        self.assertEqual(code, InvariantViolation.exit_code)

    def test_precondition_value_error_exits_with_config_code(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            with patch.dict(os.environ, {}, clear=True):
                with patch.object(main.Lab, "solve", side_effect=ValueError("p 必须 > 2")):
                    code = main.main(["solve", "--out", temp_dir])
        self.assertEqual(code, ConfigError.exit_code)

    def test_pohozaev_on_cone_is_rejected_before_compute(self):
        argv = ["pohozaev", "--set", "geometry.family=cone", "--set", "geometry.aperture=1.0"]
        with patch.dict(os.environ, {}, clear=True):
            with patch("main.Lab") as lab:
                code = main.main(argv)
            with self.assertRaises(ConfigError):
                main.load_config("pohozaev", overrides={"geometry.family": "cone", "geometry.aperture": 1.0})
            # 其余实验在锥上照常可用
            config = main.load_config("solve", overrides={"geometry.family": "cone", "geometry.aperture": 1.0})
        self.assertEqual(code, 2)
        lab.assert_not_called()
        self.assertEqual(config.domain.family, "cone")

    def test_scan_compares_curvature_signs_with_flat_reference(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            argv = [
                "scan",
                "--out",
                temp_dir,
                "--set",
                "geometry.meridian_samples=8",
                "--set",
                "sweep.gap_min=0.2",
                "--set",
                "scan.kappas=[-1.0, 1.0]",
            ]
            with patch.dict(os.environ, {}, clear=True):
                self.assertEqual(main.main(argv), 0)
            (table,) = Path(temp_dir).glob("scan_*/scan.csv")
            rows = plots.read_csv(table)
        self.assertEqual([row["kappa"] for row in rows], [-1.0, 1.0])
        concave, convex = rows
        self.assertEqual(concave["mu_half"], convex["mu_half"])
        # 平均曲率为负时 μ 低于半空间参照值
        self.assertLess(concave["mean_curvature"], 0.0)
        self.assertEqual(concave["below_half"], 1.0)
        self.assertGreater(convex["mean_curvature"], 0.0)
        self.assertEqual(convex["below_half"], 0.0)


class ReportTest(unittest.TestCase):
    def test_report_errors(self):
        with self.assertRaises(ConfigError):
            main.report([])
        with self.assertRaises(ConfigError):
            main.report(["/nonexistent/ledger.jsonl"])
        with tempfile.TemporaryDirectory() as temp_dir:
            empty = Path(temp_dir) / "ledger.jsonl"
            empty.write_text("", encoding="utf-8")
            with self.assertRaises(ConfigError):
                main.report([str(empty)])

    def test_report_without_ledgers_exits_with_config_error(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            with patch.dict(os.environ, {}, clear=True):
                self.assertEqual(main.main(["report", "--out", temp_dir]), 2)


if __name__ == "__main__":
    unittest.main()
