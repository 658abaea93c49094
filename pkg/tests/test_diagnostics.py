import copy
import unittest

import numpy as np

from src.config import DEFAULT_CONFIG
from src.core.assembly import buoyancy_load
from src.core.diagnostics import (buoyancy_production, cumulative_energy_check, dissipation, energy_report,
                                  energy_slack, gronwall_weight, korn_equivalence, symmetric_gradient_norm,
                                  temperature_decay_check, theta_norms, total_energy, uniqueness_metrics, z_norm)
from src.core.enums import ClampMode, Field
from src.core.errors import CertificateUndefinedError, ParameterError
from src.core.fem import build_dof_map, interpolate
from src.core.mesh import GeometrySpec, build_decomposed_mesh
from src.core.model import SchemeParams, SourceTerms, make_material
from src.core.state import State, Trajectory
from src.core.stepper import picard_advance


def unit_dofs(nx=4, ny_f=2, ny_m=2):
    geom = GeometrySpec(width=1.0, porous_height=0.5, free_height=0.5)
    return build_dof_map(build_decomposed_mesh(geom, nx, ny_f, ny_m), ClampMode.NONE)


class TestEnergy(unittest.TestCase):
    def setUp(self):
        self.dofs = unit_dofs()
        self.material = make_material(copy.deepcopy(DEFAULT_CONFIG["material"]), self.dofs)

    def test_total_energy_of_uniform_fields(self):
        state = State.zeros(self.dofs).updated(0.0, {
            Field.U_F: interpolate(self.dofs, Field.U_F, lambda x, y: (1.0 + 0.0 * x, 0.0 * y)),
            Field.U_M: interpolate(self.dofs, Field.U_M, lambda x, y: (0.0 * x, 1.0 + 0.0 * y)),
            Field.THETA: np.ones(self.dofs[Field.THETA].size),
        })
        report = total_energy(state, sigma=3.0, varpi=0.5, dofs=self.dofs)
        self.assertAlmostEqual(report.kinetic_f, 0.25, places=13)
        self.assertAlmostEqual(report.kinetic_m, 0.125, places=13)
        self.assertAlmostEqual(report.thermal, 1.5, places=13)
        self.assertAlmostEqual(report.E_sigma, 1.875, places=13)

    def test_quasistatic_matrix_carries_no_kinetic_energy(self):
        state = State.zeros(self.dofs).updated(0.0, {
            Field.U_M: interpolate(self.dofs, Field.U_M, lambda x, y: (x, y))})
        self.assertEqual(total_energy(state, 1.0, 0.0, self.dofs).kinetic_m, 0.0)

    def test_dissipation_of_uniform_matrix_flow(self):
        params = SchemeParams(dt=0.1, xi=1e-3, sigma=2.0, final_time=1.0)
        state = State.zeros(self.dofs).updated(0.0, {
            Field.U_M: interpolate(self.dofs, Field.U_M, lambda x, y: (1.0 + 0.0 * x, 0.0 * y)),
            Field.THETA: interpolate(self.dofs, Field.THETA, lambda x, y: x + 0.0 * y),
        })
        d = dissipation(state, state, self.material, params, self.dofs)
        # nu / kappa = 100 over the matrix layer of area 0.5
        self.assertAlmostEqual(d.darcy, 50.0, places=10)
        self.assertAlmostEqual(d.thermal, 2.0, places=12)
        self.assertAlmostEqual(d.brinkman, 0.0, places=12)
        self.assertEqual(d.viscous, 0.0)
        self.assertEqual(d.bjsj, 0.0)
        self.assertAlmostEqual(d.full, 52.0, places=10)

    def test_buoyancy_production(self):
        state = State.zeros(self.dofs).updated(0.0, {
            Field.U_F: interpolate(self.dofs, Field.U_F, lambda x, y: (0.0 * x, 1.0 + 0.0 * y)),
            Field.U_M: interpolate(self.dofs, Field.U_M, lambda x, y: (0.0 * x, 2.0 + 0.0 * y)),
            Field.THETA: np.ones(self.dofs[Field.THETA].size),
        })
        self.assertAlmostEqual(buoyancy_production(state, self.dofs), 1.5, places=13)

    def test_bjsj_dissipation_with_unit_coefficients(self):
        spec = copy.deepcopy(DEFAULT_CONFIG["material"])
        spec.update(kappa={"kind": "constant", "value": 1.0}, kappa_bounds={"lower": 1.0, "upper": 1.0})
        material = make_material(spec, self.dofs)
        params = SchemeParams(dt=0.1, xi=1e-3, sigma=1.0, final_time=1.0)
        state = State.zeros(self.dofs).updated(0.0, {
            Field.U_F: interpolate(self.dofs, Field.U_F, lambda x, y: (1.0 + 0.0 * x, 0.0 * y))})
        # alpha nu / sqrt(2 kappa) times the unit-length interface
        self.assertAlmostEqual(dissipation(state, state, material, params, self.dofs).bjsj, 2.0 ** -0.5, places=12)

    def test_buoyancy_production_matches_assembled_load(self):
        rng = np.random.default_rng(7)
        state = State.zeros(self.dofs).updated(0.0, {
            f: rng.standard_normal(self.dofs[f].size) for f in (Field.U_F, Field.U_M, Field.THETA)})
        assembled = (state.u_f @ buoyancy_load(self.dofs, Field.U_F, state.theta)
                     + state.u_m @ buoyancy_load(self.dofs, Field.U_M, state.theta))
        self.assertAlmostEqual(buoyancy_production(state, self.dofs), assembled, delta=1e-12 * (1.0 + abs(assembled)))

    def test_certificate_is_undefined_with_sources(self):
        sources = SourceTerms(g=lambda x, y, t: 0.0 * x)
        params = SchemeParams(dt=0.1, xi=0.0, sigma=1.0, final_time=1.0, sources=sources)
        zero = State.zeros(self.dofs)
        later = State.zeros(self.dofs, t=0.1)
        with self.assertRaises(CertificateUndefinedError):
            energy_slack(zero, later, params, self.material, self.dofs)
        report = energy_report(zero, later, params, self.material, self.dofs)
        self.assertIsNone(report.slack)
        self.assertIsNone(report.identity_residual)

    def test_trajectory_checks_for_pure_diffusion(self):
        params = SchemeParams(dt=0.05, xi=0.0, sigma=1.0, final_time=0.2, buoyancy=False)
        theta0 = interpolate(self.dofs, Field.THETA, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        state = State.zeros(self.dofs).updated(0.0, {Field.THETA: theta0})
        trajectory = Trajectory(states=[state])
        for step in range(1, 5):
            state, diag = picard_advance(state, params, self.material, self.dofs, step=step)
            trajectory.append(state, diag)
        self.assertLessEqual(temperature_decay_check(trajectory, self.dofs), 1e-12)
        self.assertLessEqual(cumulative_energy_check(trajectory), 1e-12)
        norms = theta_norms(trajectory, self.dofs)
        self.assertEqual(len(norms), 5)
        self.assertTrue(np.all(np.diff(norms) < 0.0))

    def test_empty_trajectory(self):
        self.assertEqual(cumulative_energy_check(Trajectory()), 0.0)


class TestKorn(unittest.TestCase):
    def test_equivalence_constant_is_positive(self):
        lam, c_z = korn_equivalence(unit_dofs())
        self.assertGreater(lam, 0.0)
        self.assertAlmostEqual(c_z, lam ** -0.5)

    def test_equivalence_constant_is_stable_under_refinement(self):
        coarse = korn_equivalence(unit_dofs(2, 1, 1))[1]
        fine = korn_equivalence(unit_dofs(4, 2, 2))[1]
        self.assertLessEqual(max(coarse, fine) / min(coarse, fine), 2.0)

    def test_rigid_rotation_is_seen_by_the_tangential_trace(self):
        dofs = unit_dofs()
        rotation = interpolate(dofs, Field.U_F, lambda x, y: (-(y - 0.75), x - 0.5))
        self.assertAlmostEqual(symmetric_gradient_norm(dofs, rotation), 0.0, places=12)
        self.assertAlmostEqual(z_norm(dofs, rotation, dofs.zeros(Field.U_M)), 0.25, places=12)


class TestUniqueness(unittest.TestCase):
    def setUp(self):
        self.dofs = unit_dofs()
        self.material = make_material(copy.deepcopy(DEFAULT_CONFIG["material"]), self.dofs)

    def test_gronwall_weight(self):
        self.assertEqual(gronwall_weight(State.zeros(self.dofs), self.dofs), 1.0)
        theta = interpolate(self.dofs, Field.THETA, lambda x, y: 2.0 * x)
        state = State.zeros(self.dofs).updated(0.0, {Field.THETA: theta})
        # |grad theta|_{L4}^8 = 2^8 on the unit square
        self.assertAlmostEqual(gronwall_weight(state, self.dofs), 1.0 + 2.0 ** 8, places=9)
        flow = State.zeros(self.dofs).updated(0.0, {
            Field.U_F: interpolate(self.dofs, Field.U_F, lambda x, y: (1.0 + 0.0 * x, 0.0 * y)),
            Field.U_M: interpolate(self.dofs, Field.U_M, lambda x, y: (0.0 * x, 2.0 + 0.0 * y)),
        })
        # |u_f|_{W^{1,6}}^4 = 0.5^(2/3) and |u_m|_{L^6}^4 = (2^6 * 0.5)^(2/3) on layers of area 0.5
        self.assertAlmostEqual(gronwall_weight(flow, self.dofs), 0.5 ** (2.0 / 3.0) + 32.0 ** (2.0 / 3.0) + 1.0,
                               places=10)

    def test_identical_states(self):
        theta = interpolate(self.dofs, Field.THETA, lambda x, y: x * y)
        state = State.zeros(self.dofs).updated(0.0, {Field.THETA: theta})
        metrics = uniqueness_metrics(state, state, self.material, self.dofs)
        self.assertEqual(metrics.distance, 0.0)
        self.assertEqual(metrics.z_norm, 0.0)

    def test_temperature_difference(self):
        a = State.zeros(self.dofs)
        b = a.updated(0.0, {Field.THETA: np.full(self.dofs[Field.THETA].size, 0.5)})
        metrics = uniqueness_metrics(a, b, self.material, self.dofs)
        self.assertAlmostEqual(metrics.dtheta, 0.25, places=13)
        self.assertAlmostEqual(metrics.distance, 0.25, places=13)

    def test_states_from_another_mesh(self):
        other = State.zeros(unit_dofs(nx=2, ny_f=1, ny_m=1))
        with self.assertRaises(ParameterError):
            uniqueness_metrics(State.zeros(self.dofs), other, self.material, self.dofs)


if __name__ == "__main__":
    unittest.main()
