import copy
import unittest

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from src.config import DEFAULT_CONFIG
from src.core.assembly import SparseSystem, divergence_defect, scalar_mass, scalar_stiffness, weak_residual
from src.core.enums import ClampMode, Field, LinearSolverKind
from src.core.errors import SolverError, StepDivergenceError
from src.core.fem import apply_constraints, build_dof_map, interpolate
from src.core.mesh import GeometrySpec, build_decomposed_mesh
from src.core.model import SchemeParams, make_material
from src.core.state import State
from src.core.stepper import LinearSolver, picard_advance, solve_linear


def plain_system(matrix, rhs) -> SparseSystem:
    n = len(rhs)
    return SparseSystem(matrix=sp.csr_matrix(matrix), rhs=np.asarray(rhs, dtype=float), fields=(Field.THETA,),
                        blocks={Field.THETA: slice(0, n)}, full_blocks={Field.THETA: slice(0, n)},
                        free_index=np.arange(n), constrained_index=np.zeros(0, dtype=np.int64),
                        prescribed=np.zeros(n))


def dominant_matrix(n: int, seed: int = 3) -> sp.csr_matrix:
    rng = np.random.default_rng(seed)
    off = sp.random(n, n, density=5.0 / n, random_state=rng, format="csr")
    row_sums = np.asarray(abs(off).sum(axis=1)).ravel()
    return (off + sp.diags(row_sums + 1.0)).tocsr()


class TestLinearSolver(unittest.TestCase):
    def test_identity(self):
        b = np.array([1.0, -2.0, 3.5])
        np.testing.assert_allclose(solve_linear(plain_system(np.eye(3), b)), b)

    def test_small_symmetric_system(self):
        x = solve_linear(plain_system([[2.0, 1.0], [1.0, 2.0]], [1.0, 1.0]))
        np.testing.assert_allclose(x, [1.0 / 3.0, 1.0 / 3.0], rtol=1e-14)

    def test_zero_right_hand_side(self):
        solver = LinearSolver()
        x, info = solver.solve(sp.eye(4), np.zeros(4))
        np.testing.assert_array_equal(x, 0.0)
        self.assertEqual(info.method, "zero")

    def test_preconditioned_gmres(self):
        A = dominant_matrix(500)
        b = np.random.default_rng(4).standard_normal(500)
        solver = LinearSolver(LinearSolverKind.GMRES_ILU, tol=1e-10, dense_threshold=100)
        x, info = solver.solve(A, b, key="test")
        self.assertLessEqual(np.linalg.norm(A @ x - b) / np.linalg.norm(b), 1e-10)
        self.assertIn(info.method, ("gmres-ilu", "gmres"))
        # the cached factor is reused for a second right-hand side
        x2, _ = solver.solve(A, 2.0 * b, key="test")
        self.assertLessEqual(np.linalg.norm(A @ x2 - 2.0 * b) / np.linalg.norm(2.0 * b), 1e-10)
        self.assertEqual(len(solver.history), 2)

    def test_sparse_direct(self):
        A = dominant_matrix(300, seed=5)
        b = np.ones(300)
        solver = LinearSolver(LinearSolverKind.DIRECT, tol=1e-10, dense_threshold=10)
        x, info = solver.solve(A, b)
        self.assertEqual(info.method, "sparse-lu")
        np.testing.assert_allclose(A @ x, b, atol=1e-10)

    def test_singular_dense_system(self):
        with self.assertRaises(SolverError):
            LinearSolver().solve(np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([1.0, 2.0]))

    def test_singular_sparse_direct_system(self):
        solver = LinearSolver(LinearSolverKind.DIRECT, dense_threshold=0)
        with self.assertRaises(SolverError):
            solver.solve(sp.diags([1.0, 0.0, 1.0]), np.ones(3))


class TestPicardAdvance(unittest.TestCase):
    def setUp(self):
        geom = GeometrySpec(width=1.0, porous_height=0.5, free_height=0.5)
        self.dofs = build_dof_map(build_decomposed_mesh(geom, 4, 2, 2), ClampMode.NONE)
        self.material = make_material(copy.deepcopy(DEFAULT_CONFIG["material"]), self.dofs)

    def test_zero_state_stays_zero(self):
        params = SchemeParams(dt=0.1, xi=1e-3, sigma=1.0, final_time=1.0)
        state, diag = picard_advance(State.zeros(self.dofs), params, self.material, self.dofs, step=1)
        for f in (Field.U_F, Field.P_F, Field.U_M, Field.P_M, Field.THETA, Field.MU):
            np.testing.assert_array_equal(state[f], 0.0)
        self.assertEqual(diag.picard_iterations, 1)
        self.assertAlmostEqual(state.t, 0.1)
        self.assertEqual(diag.energy.E_sigma, 0.0)
        self.assertEqual(diag.energy.slack, 0.0)

    def test_pure_diffusion_is_one_heat_solve(self):
        params = SchemeParams(dt=0.05, xi=0.0, sigma=1.0, final_time=1.0, buoyancy=False)
        theta0 = interpolate(self.dofs, Field.THETA, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        state0 = State.zeros(self.dofs).updated(0.0, {Field.THETA: theta0})
        state1, diag = picard_advance(state0, params, self.material, self.dofs)

        space = self.dofs[Field.THETA]
        free = space.free
        mass = scalar_mass(self.dofs, Field.THETA).tocsr()
        A = (mass / params.dt + scalar_stiffness(self.dofs, Field.THETA)).tocsr()
        expected = np.zeros(space.size)
        expected[free] = spsolve(A[free][:, free].tocsc(), (mass @ theta0 / params.dt)[free])
        np.testing.assert_allclose(state1.theta, expected, atol=1e-11)
        np.testing.assert_allclose(state1.u_f, 0.0, atol=1e-13)
        np.testing.assert_allclose(state1.u_m, 0.0, atol=1e-13)
        self.assertLessEqual(diag.picard_iterations, 2)

        energy = diag.energy
        self.assertLess(energy.E_sigma, energy.E_previous)
        self.assertGreater(energy.slack, 0.0)
        self.assertAlmostEqual(energy.identity_residual, 0.0, delta=1e-10 * energy.E_previous)
        self.assertAlmostEqual(energy.slack, 0.5 * params.dt * energy.D_thermal, delta=1e-10 * energy.E_previous)
        self.assertLess(diag.momentum_residual, 1e-10)
        self.assertLess(diag.temperature_residual, 1e-10)

    def test_buoyant_step_conserves_interface_flux(self):
        params = SchemeParams(dt=0.05, xi=1e-3, sigma=1.0, final_time=1.0)
        theta0 = interpolate(self.dofs, Field.THETA, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        state0 = State.zeros(self.dofs).updated(0.0, {Field.THETA: theta0})
        state1, diag = picard_advance(state0, params, self.material, self.dofs)
        self.assertGreater(np.abs(state1.u_f).max(), 0.0)
        self.assertLess(diag.interface_flux, 1e-10)
        self.assertIsNotNone(diag.energy.slack)

    def test_step_records_discrete_divergence(self):
        params = SchemeParams(dt=0.05, xi=1e-3, sigma=1.0, final_time=1.0)
        theta0 = interpolate(self.dofs, Field.THETA, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        state0 = State.zeros(self.dofs).updated(0.0, {Field.THETA: theta0})
        state1, diag = picard_advance(state0, params, self.material, self.dofs)
        self.assertEqual(diag.divergence, {f.value: v for f, v in divergence_defect(self.dofs, state1).items()})
        self.assertGreater(diag.divergence_scale, 0.0)
        for value in diag.divergence.values():
            self.assertLessEqual(value, params.linear_tol * diag.divergence_scale + 1e-14)

    def test_weak_residual_at_converged_step(self):
        params = SchemeParams(dt=0.05, xi=1e-3, sigma=1.0, final_time=1.0)
        theta0 = interpolate(self.dofs, Field.THETA, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        state0 = State.zeros(self.dofs).updated(0.0, {Field.THETA: theta0})
        state1, _ = picard_advance(state0, params, self.material, self.dofs)
        converged = sum(weak_residual(state0, state1, params, self.material, self.dofs))
        self.assertLessEqual(converged, 10.0 * (params.picard_tol + params.linear_tol))

        bump = apply_constraints(self.dofs, Field.THETA, np.ones(self.dofs[Field.THETA].size))
        perturbed = state1.updated(state1.t, {Field.THETA: state1.theta + 1e-3 * bump})
        moved = sum(weak_residual(state0, perturbed, params, self.material, self.dofs))
        self.assertGreaterEqual(moved, 10.0 * converged)
        self.assertGreater(moved, 0.0)

    def test_iteration_limit(self):
        params = SchemeParams(dt=0.05, xi=1e-3, sigma=1.0, final_time=1.0, picard_max=1, picard_tol=1e-14)
        theta0 = interpolate(self.dofs, Field.THETA, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        state0 = State.zeros(self.dofs).updated(0.0, {Field.THETA: theta0})
        with self.assertRaises(StepDivergenceError) as ctx:
            picard_advance(state0, params, self.material, self.dofs)
        self.assertEqual(len(ctx.exception.history), 1)


if __name__ == "__main__":
    unittest.main()
