import json
import tempfile
import unittest
from contextlib import redirect_stderr
from io import StringIO
from pathlib import Path

from src.config import Config
from src.main import EXIT_CONFIG, EXIT_OK, build_parser, main
from src.output import ENERGY_FILE, REPORT_FILE


class TestParser(unittest.TestCase):
    def test_source_is_required(self):
        with redirect_stderr(StringIO()), self.assertRaises(SystemExit):
            build_parser().parse_args(["run"])

    def test_config_and_preset_are_exclusive(self):
        with redirect_stderr(StringIO()), self.assertRaises(SystemExit):
            build_parser().parse_args(["run", "--config", "a.json", "--preset", "zero_data"])

    def test_experiment_options(self):
        args = build_parser().parse_args(["dt-refine", "--preset", "diffusion", "--levels", "4"])
        self.assertEqual(args.command, "dt-refine")
        self.assertEqual(args.levels, 4)
        args = build_parser().parse_args(["uniqueness", "--preset", "buoyant_cavity", "--amplitude", "1e-5"])
        self.assertEqual(args.amplitude, 1e-5)


class TestMain(unittest.TestCase):
    def test_validate_preset(self):
        self.assertEqual(main(["validate-config", "--preset", "buoyant_cavity", "--quiet"]), EXIT_OK)

    def test_configuration_errors(self):
        self.assertEqual(main(["validate-config", "--preset", "no_such_preset", "--quiet"]), EXIT_CONFIG)
        with tempfile.TemporaryDirectory() as tmp:
            missing = str(Path(tmp) / "missing.json")
            self.assertEqual(main(["run", "--config", missing, "--quiet"]), EXIT_CONFIG)
            bad = Path(tmp) / "bad.json"
            bad.write_text(json.dumps({"material": {"nu": {"kind": "linear", "value": 1.0}}}))
            self.assertEqual(main(["validate-config", "--config", str(bad), "--quiet"]), EXIT_CONFIG)

    def test_run_writes_report(self):
        config = Config.from_preset("zero_data").replace(scheme={"final_time": 0.02})
        with tempfile.TemporaryDirectory() as tmp:
            path = config.save_config(Path(tmp) / "zero.json")
            out = Path(tmp) / "out"
            self.assertEqual(main(["run", "--config", str(path), "--out", str(out), "--quiet"]), EXIT_OK)
            self.assertTrue((out / ENERGY_FILE).exists())
            with open(out / REPORT_FILE) as f:
                report = json.load(f)
        self.assertEqual(report["kind"], "run")
        self.assertEqual(report["steps"], 2)
        self.assertTrue(report["passed"])


if __name__ == "__main__":
    unittest.main()
