import copy
import math
import unittest

import numpy as np

from src.config import DEFAULT_CONFIG
from src.core.enums import ClampMode, CoefficientKind, Field, Region
from src.core.errors import BoundViolationError, ParameterError
from src.core.fem import build_dof_map
from src.core.mesh import GeometrySpec, build_decomposed_mesh
from src.core.model import (Coefficient, Permeability, SchemeParams, calibrate_sigma, dirichlet_eigenpair,
                            epsilon_star, make_material, poincare_constant)


def material_spec(**changes) -> dict:
    spec = copy.deepcopy(DEFAULT_CONFIG["material"])
    spec.update(changes)
    return spec


class TestCoefficient(unittest.TestCase):
    def test_constant(self):
        c = Coefficient.from_dict({"kind": "constant", "value": 2.5})
        np.testing.assert_array_equal(c([0.0, 3.0]), [2.5, 2.5])
        np.testing.assert_array_equal(c.derivative([1.0]), [0.0])

    def test_affine_clamped(self):
        c = Coefficient.from_dict({"kind": "affine_clamped", "a": 1.0, "b": 0.5, "lower": 0.5, "upper": 2.0})
        np.testing.assert_allclose(c([-4.0, 0.0, 1.0, 10.0]), [0.5, 1.0, 1.5, 2.0])
        np.testing.assert_allclose(c.derivative([-4.0, 1.0, 10.0]), [0.0, 0.5, 0.0])

    def test_tanh(self):
        c = Coefficient.from_dict({"kind": "tanh", "a": 1.0, "b": 0.5, "c": 1.0, "d": 0.0})
        self.assertAlmostEqual(float(c(0.0)), 1.0)
        self.assertAlmostEqual(float(c.derivative(0.0)), 0.5)

    def test_spline_is_clamped_outside_knots(self):
        c = Coefficient.from_dict({"kind": "spline", "knots": [0.0, 1.0, 2.0], "values": [1.0, 2.0, 1.5]})
        np.testing.assert_allclose(c([-1.0, 0.0, 1.0, 5.0]), [1.0, 1.0, 2.0, 1.5])
        self.assertEqual(float(c.derivative(5.0)), 0.0)

    def test_invalid_specs(self):
        with self.assertRaises(ParameterError):
            Coefficient.from_dict({"kind": "quadratic"})
        with self.assertRaises(ParameterError):
            Coefficient.from_dict({"kind": "tanh", "a": 1.0})
        with self.assertRaises(ParameterError):
            Coefficient.from_dict({"kind": "spline", "knots": [0.0, 0.0], "values": [1.0, 1.0]})

    def test_permeability(self):
        k = Permeability.from_dict({"kind": "affine_clamped", "a": 1.0, "by": -1.0, "lower": 0.25})
        np.testing.assert_allclose(k([0.0, 0.0], [0.5, 1.0]), [0.5, 0.25])
        with self.assertRaises(ParameterError):
            Permeability.from_dict({"kind": "tanh", "a": 1.0})


class TestMaterial(unittest.TestCase):
    def test_default_material_is_valid(self):
        material = make_material(material_spec())
        self.assertEqual(material.nu.kind, CoefficientKind.CONSTANT)
        self.assertIs(material.lam(Region.FREE), material.lambda_f)
        self.assertIs(material.lam(Region.MATRIX), material.lambda_m)

    def test_tanh_viscosity_within_bounds(self):
        spec = material_spec(nu={"kind": "tanh", "a": 1.0, "b": 0.5, "c": 1.0, "d": 0.0},
                             nu_bounds={"lower": 0.5, "upper": 1.5, "lipschitz": 0.5})
        material = make_material(spec)
        self.assertAlmostEqual(float(material.nu(0.0)), 1.0)

    def test_unbounded_viscosity_is_rejected(self):
        spec = material_spec(nu={"kind": "affine_clamped", "a": 0.0, "b": 1.0})
        with self.assertRaises(BoundViolationError) as ctx:
            make_material(spec)
        self.assertEqual(ctx.exception.assumption, "A1")

    def test_lipschitz_violation(self):
        spec = material_spec(lambda_f={"kind": "tanh", "a": 1.0, "b": 0.1, "c": 10.0, "d": 0.0},
                             lambda_bounds={"lower": 0.5, "upper": 1.5, "lipschitz": 0.5})
        with self.assertRaises(BoundViolationError) as ctx:
            make_material(spec)
        self.assertEqual(ctx.exception.assumption, "A2")

    def test_permeability_out_of_bounds(self):
        spec = material_spec(kappa={"kind": "constant", "value": 1.0})
        with self.assertRaises(BoundViolationError) as ctx:
            make_material(spec)
        self.assertEqual(ctx.exception.assumption, "A3")

    def test_bad_scalars(self):
        with self.assertRaises(ParameterError):
            make_material(material_spec(alpha=0.0))
        with self.assertRaises(ParameterError):
            make_material(material_spec(varpi=-1.0))
        with self.assertRaises(ParameterError):
            make_material(material_spec(nu_bounds={"lower": 1.0, "upper": 1.0}))


class TestSchemeParams(unittest.TestCase):
    def test_rejects_invalid_values(self):
        for changes in ({"dt": 0.0}, {"xi": 1.0}, {"sigma": -1.0}, {"final_time": 0.0}, {"picard_tol": 2.0},
                        {"picard_max": 0}, {"varpi": -0.5}):
            kwargs = dict(dt=0.1, xi=0.0, sigma=1.0, final_time=1.0)
            kwargs.update(changes)
            with self.assertRaises(ParameterError, msg=str(changes)):
                SchemeParams(**kwargs)

    def test_with_dt(self):
        params = SchemeParams(dt=0.1, xi=0.0, sigma=1.0, final_time=1.0)
        self.assertEqual(params.with_dt(0.05).dt, 0.05)
        self.assertEqual(params.dt, 0.1)


class TestConstants(unittest.TestCase):
    def test_epsilon_star(self):
        self.assertAlmostEqual(epsilon_star(make_material(material_spec(
            kappa={"kind": "constant", "value": 1.0}, kappa_bounds={"lower": 1.0, "upper": 1.0}))), 0.25)
        self.assertAlmostEqual(epsilon_star(make_material(material_spec(
            nu={"kind": "constant", "value": 0.5}, nu_bounds={"lower": 0.5, "upper": 0.5, "lipschitz": 0.0},
            kappa={"kind": "constant", "value": 1.0}, kappa_bounds={"lower": 1.0, "upper": 1.0}))), 0.125)

    def test_calibrate_sigma(self):
        material = make_material(material_spec(kappa={"kind": "constant", "value": 1.0},
                                               kappa_bounds={"lower": 1.0, "upper": 1.0}))
        self.assertAlmostEqual(calibrate_sigma(material, 0.0507, 1.0), 1.6224, places=10)
        with self.assertRaises(ParameterError):
            calibrate_sigma(material, 0.0, 1.0)

    def test_poincare_constant_of_unit_square(self):
        geom = GeometrySpec(width=1.0, porous_height=0.5, free_height=0.5)
        dofs = build_dof_map(build_decomposed_mesh(geom, 8, 4, 4), ClampMode.NONE)
        self.assertAlmostEqual(poincare_constant(dofs) * 2.0 * math.pi ** 2, 1.0, delta=0.02)

    def test_poincare_constant_of_tall_rectangle(self):
        # first Dirichlet eigenvalue of [0, 1] x [0, 2] is pi^2 (1 + 1/4)
        exact = 1.0 / (math.pi ** 2 * 1.25)
        geom = GeometrySpec(width=1.0, porous_height=1.0, free_height=1.0)
        values = [poincare_constant(build_dof_map(build_decomposed_mesh(geom, n, n, n), ClampMode.NONE))
                  for n in (2, 4, 8)]
        self.assertAlmostEqual(values[-1] / exact, 1.0, delta=5e-3)
        self.assertLessEqual(values[0], values[1])
        self.assertLessEqual(values[1], values[2])
        self.assertLessEqual(values[2], exact * (1.0 + 1e-12))

    def test_eigenvector_is_normalized(self):
        geom = GeometrySpec(width=1.0, porous_height=0.5, free_height=0.5)
        dofs = build_dof_map(build_decomposed_mesh(geom, 4, 2, 2), ClampMode.NONE)
        value, vector = dirichlet_eigenpair(dofs)
        self.assertGreater(value, 0.0)
        space = dofs[Field.THETA]
        np.testing.assert_array_equal(vector[space.constrained], 0.0)
        self.assertGreaterEqual(vector.sum(), 0.0)


if __name__ == "__main__":
    unittest.main()
