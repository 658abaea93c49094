import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import sympy

from src.config import Config
from src.core.engine import SimulationEngine
from src.core.enums import Field, NormKind
from src.core.errors import ConfigError
from src.core.fem import field_norm
from src.experiments import (_orders, dt_refine, execute, fitted_gronwall_constant, interior_bump, mms,
                             run_experiment, summary_table, xi_sweep)
from src.output import ENERGY_FILE
from src.scenarios.manufactured import manufactured_fields


def tiny(preset: str, final_time: float, **scheme) -> Config:
    return Config.from_preset(preset).replace(geometry={"nx": 2, "ny_f": 1, "ny_m": 1},
                                              scheme={"final_time": final_time, **scheme})


class TestHelpers(unittest.TestCase):
    def test_orders(self):
        orders = _orders([1.0, 0.5, 0.125, None, 0.1])
        self.assertAlmostEqual(orders[0], 1.0)
        self.assertAlmostEqual(orders[1], 2.0)
        self.assertIsNone(orders[2])
        self.assertIsNone(orders[3])
        self.assertIsNone(_orders([0.0, 1.0])[0])

    def test_fitted_gronwall_constant(self):
        H = [0.0, 1.0, 2.0]
        d = [1.0, math.e, math.e ** 4]
        self.assertAlmostEqual(fitted_gronwall_constant(d, H), 2.0)
        self.assertIsNone(fitted_gronwall_constant([0.0, 1.0], [0.0, 1.0]))
        self.assertIsNone(fitted_gronwall_constant([], []))

    def test_interior_bump(self):
        engine = SimulationEngine()
        engine.initialize(Config.from_preset("zero_data"))
        chi = interior_bump(engine.dofs)
        self.assertAlmostEqual(field_norm(engine.dofs, Field.THETA, chi, NormKind.L2), 1.0, places=12)
        np.testing.assert_array_equal(chi[engine.dofs[Field.THETA].constrained], 0.0)


class TestManufacturedFields(unittest.TestCase):
    def test_free_velocity_is_divergence_free(self):
        fields = manufactured_fields("free", porous_height=1.0)
        x, y = sympy.symbols("x y")
        u, v = (sympy.sympify(c) for c in fields["exact"]["u_f"])
        self.assertEqual(sympy.simplify(sympy.diff(u, x) + sympy.diff(v, y)), 0)
        self.assertEqual(set(fields), {"f_f", "g", "exact"})
        self.assertEqual(set(fields["exact"]), {"u_f", "P_f", "theta"})

    def test_matrix_mode(self):
        fields = manufactured_fields("matrix")
        self.assertIn("f_m", fields)
        self.assertEqual(set(fields["exact"]), {"u_m", "P_m", "theta"})

    def test_unknown_mode(self):
        with self.assertRaises(ValueError):
            manufactured_fields("both")


class TestExperiments(unittest.TestCase):
    def test_run_experiment_writes_outputs(self):
        config = tiny("zero_data", 0.02)
        with tempfile.TemporaryDirectory() as tmp:
            report = run_experiment(config, tmp)
            self.assertTrue((Path(tmp) / ENERGY_FILE).exists())
        self.assertTrue(report["passed"])
        self.assertEqual(report["steps"], 2)
        self.assertIsNone(report["aborted"])
        self.assertEqual(report["halved_steps"], [])
        self.assertEqual(report["config_hash"], config.config_hash())
        self.assertEqual(report["final_norms"]["theta"], 0.0)

    def test_execute_from_replacement_state(self):
        config = tiny("diffusion", 0.1)
        reference = execute(config)
        again = execute(config, initial=reference.trajectory.initial)
        np.testing.assert_allclose(again.final.theta, reference.final.theta, atol=1e-14)

    def test_levels_below_minimum(self):
        with self.assertRaises(ConfigError):
            xi_sweep(tiny("zero_data", 0.02), levels=2)
        with self.assertRaises(ConfigError):
            dt_refine(tiny("zero_data", 0.02), levels=1)

    def test_xi_sweep_on_zero_data(self):
        config = tiny("zero_data", 0.02)
        report = xi_sweep(config, levels=3)
        self.assertEqual([row["xi"] for row in report["levels"]],
                         [config.scheme.xi / 2 ** level for level in range(3)])
        self.assertEqual(report["differences"], [0.0, 0.0])
        self.assertTrue(report["cauchy"])
        self.assertEqual(report["brinkman_ratio"], 1.0)
        self.assertTrue(report["passed"])

    def test_dt_refine_with_eigenmode_oracle(self):
        report = dt_refine(tiny("diffusion", 0.1), levels=3)
        self.assertEqual(len(report["levels"]), 3)
        self.assertFalse(any(row["failed"] for row in report["levels"]))
        self.assertGreater(report["eigenvalue"], 0.0)
        self.assertEqual(len(report["oracle_orders"]), 2)
        for row in report["levels"]:
            self.assertIn("oracle_error", row)
            # the discrete iterate is (1 + dt lambda_h)^-n theta0
            self.assertLess(row["iterate_deviation"], 1e-10)

    def test_mms_needs_a_clamped_manufactured_config(self):
        with self.assertRaises(ConfigError):
            mms(tiny("zero_data", 0.02))

    def test_summary_table(self):
        table = summary_table({"kind": "dt-refine", "passed": False, "levels": [{"level": 0, "dt": 0.1}]})
        self.assertEqual(len(table.columns), 2)
        self.assertIn("FAILED", str(table.title))
        flat = summary_table({"kind": "run", "passed": True, "steps": 3, "nested": {"a": 1}})
        self.assertEqual(flat.row_count, 3)


if __name__ == "__main__":
    unittest.main()
