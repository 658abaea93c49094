"""Sparse linear solves and the Picard iteration of one time step."""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, LinAlgWarning, lu_factor, lu_solve
from scipy.sparse.linalg import LinearOperator, gmres, spilu, splu

from .assembly import (MomentumOperator, SparseSystem, TemperatureOperator, apply_boundary_conditions,
                       divergence_defect, interface_flux_defect)
from .diagnostics import energy_report
from .enums import Field, LinearSolverKind
from .errors import SolverError, StepDivergenceError
from .fem import DofMap
from .model import MaterialModel, SchemeParams
from .state import State, StepDiagnostics

logger = logging.getLogger(__name__)

DENSE_THRESHOLD = 2000
GMRES_RESTART = 50
GMRES_RESTARTS = 3
ILU_DROP_TOL = 1e-8
ILU_FILL_FACTOR = 40


@dataclass
class LinearSolveInfo:
    method: str
    iterations: int
    residual: float


class LinearSolver:
    """Dense LU for small systems, otherwise ILU-preconditioned restarted GMRES or sparse LU.

    The ILU factor of a named system can be kept between calls so that
    successive Picard iterates of one step share a preconditioner.
    """

    def __init__(self, kind: LinearSolverKind = LinearSolverKind.GMRES_ILU, tol: float = 1e-12,
                 max_iter: int = 500, dense_threshold: int = DENSE_THRESHOLD):
        self.kind = kind
        self.tol = tol
        self.max_iter = max_iter
        self.dense_threshold = dense_threshold
        self._preconditioners: Dict[str, Optional[LinearOperator]] = {}
        self.history: List[LinearSolveInfo] = []

    @classmethod
    def from_params(cls, params: SchemeParams) -> "LinearSolver":
        return cls(params.linear_solver, params.linear_tol, params.linear_max)

    def reset(self):
        self._preconditioners.clear()
        self.history.clear()

    def _record(self, method: str, iterations: int, residual: float) -> LinearSolveInfo:
        info = LinearSolveInfo(method, iterations, residual)
        self.history.append(info)
        return info

    def _ilu(self, A: sp.csr_matrix, key: Optional[str]) -> Optional[LinearOperator]:
        if key is not None and key in self._preconditioners:
            return self._preconditioners[key]
        try:
            ilu = spilu(A.tocsc(), drop_tol=ILU_DROP_TOL, fill_factor=ILU_FILL_FACTOR)
            M = LinearOperator(A.shape, ilu.solve)
        except RuntimeError as e:
            logger.warning("incomplete factorization failed (%s); using unpreconditioned GMRES", e)
            M = None
        if key is not None:
            self._preconditioners[key] = M
        return M

    def solve(self, A, b: np.ndarray, key: Optional[str] = None) -> Tuple[np.ndarray, LinearSolveInfo]:
        A = sp.csr_matrix(A)
        b = np.asarray(b, dtype=float)
        n = A.shape[0]
        b_norm = np.linalg.norm(b)
        if b_norm == 0.0:
            return np.zeros(n), self._record("zero", 0, 0.0)

        if n <= self.dense_threshold:
            dense = A.toarray()
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", LinAlgWarning)
                    x = lu_solve(lu_factor(dense), b)
            except (LinAlgError, ValueError) as e:
                raise SolverError(f"dense LU failed: {e}", np.inf) from e
            if not np.all(np.isfinite(x)):
                raise SolverError("dense LU hit a zero pivot", np.inf)
            residual = np.linalg.norm(b - dense @ x) / b_norm
            return x, self._record("dense-lu", 1, residual)

        if self.kind is LinearSolverKind.DIRECT:
            try:
                x = splu(A.tocsc()).solve(b)
            except RuntimeError as e:
                raise SolverError(f"sparse LU failed: {e}", np.inf) from e
            residual = np.linalg.norm(b - A @ x) / b_norm
            if not residual <= self.tol:
                raise SolverError("sparse LU solve is inaccurate", residual)
            return x, self._record("sparse-lu", 1, residual)

        M = self._ilu(A, key)
        x = None
        iterations = 0
        residual = np.inf

        def count(_):
            nonlocal iterations
            iterations += 1

        for attempt in range(GMRES_RESTARTS + 1):
            x, _ = gmres(A, b, x0=x, rtol=self.tol, restart=GMRES_RESTART, maxiter=self.max_iter,
                         M=M, callback=count, callback_type="pr_norm")
            if not np.all(np.isfinite(x)):
                if M is None:
                    break
                logger.warning("preconditioned GMRES broke down; retrying without preconditioner")
                M, x = None, None
                if key is not None:
                    self._preconditioners[key] = None
                continue
            residual = np.linalg.norm(b - A @ x) / b_norm
            if residual <= self.tol:
                return x, self._record("gmres-ilu" if M is not None else "gmres", iterations, residual)
            # a stale preconditioner from an earlier iterate may stall
            if key is not None and attempt == 0 and key in self._preconditioners:
                self._preconditioners.pop(key)
                M = self._ilu(A, key)
        raise SolverError(f"GMRES did not reach relative residual {self.tol:.1e} "
                          f"after {iterations} iterations", residual)


def solve_linear(system: SparseSystem, tol: float = 1e-12, max_iter: int = 500,
                 dense_threshold: int = DENSE_THRESHOLD) -> np.ndarray:
    solver = LinearSolver(LinearSolverKind.GMRES_ILU, tol, max_iter, dense_threshold)
    x, _ = solver.solve(system.matrix, system.rhs)
    return x


def _solve_step_system(system: SparseSystem, dofs: DofMap, solver: LinearSolver,
                       key: str) -> Tuple[Dict[Field, np.ndarray], float]:
    """Fields of the reduced solve and the norm of its right-hand side."""
    reduced = apply_boundary_conditions(system, dofs)
    x, _ = solver.solve(reduced.matrix, reduced.rhs, key=key)
    return reduced.split(x), float(np.linalg.norm(reduced.rhs))


def _residual(system: SparseSystem, dofs: DofMap, state: State) -> float:
    reduced = apply_boundary_conditions(system, dofs)
    return float(np.linalg.norm(reduced.matrix @ reduced.pack(state) - reduced.rhs))


def picard_advance(state_k: State, params: SchemeParams, material: MaterialModel, dofs: DofMap,
                   solver: Optional[LinearSolver] = None, step: int = 0) -> Tuple[State, StepDiagnostics]:
    """One time step: alternate momentum and temperature solves until the update stalls."""
    solver = solver or LinearSolver.from_params(params)
    solver.reset()
    momentum = MomentumOperator(dofs, material, params, state_k)
    temperature = TemperatureOperator(dofs, material, params, state_k)

    u_f, u_m, theta = state_k.u_f, state_k.u_m, state_k.theta
    scale = 1.0 + np.linalg.norm(np.concatenate([u_f, u_m])) + np.linalg.norm(theta)
    history: List[float] = []
    fields: Dict[Field, np.ndarray] = {}
    for iteration in range(1, params.picard_max + 1):
        fields, rhs_norm = _solve_step_system(momentum.system(theta, u_f), dofs, solver, "momentum")
        solved, _ = _solve_step_system(temperature.system(fields[Field.U_F], fields[Field.U_M]),
                                       dofs, solver, "temperature")
        theta_new = solved[Field.THETA]
        update = (np.linalg.norm(np.concatenate([fields[Field.U_F] - u_f, fields[Field.U_M] - u_m]))
                  + np.linalg.norm(theta_new - theta))
        history.append(float(update))
        u_f, u_m, theta = fields[Field.U_F], fields[Field.U_M], theta_new
        if update <= params.picard_tol * scale:
            break
    else:
        raise StepDivergenceError(f"Picard iteration did not converge in {params.picard_max} iterations "
                                  f"at t={state_k.t:.6g} (last update {history[-1]:.3e})", history)

    fields[Field.THETA] = theta
    state_k1 = state_k.updated(momentum.t_next, fields)
    diagnostics = StepDiagnostics(
        step=step, t=state_k1.t, dt=params.dt,
        picard_iterations=len(history), update_norm=history[-1], update_history=history,
        linear_iterations=[info.iterations for info in solver.history],
        linear_residual=max((info.residual for info in solver.history), default=0.0),
        momentum_residual=_residual(momentum.system(theta, u_f), dofs, state_k1),
        temperature_residual=_residual(temperature.system(u_f, u_m), dofs, state_k1),
        interface_flux=interface_flux_defect(dofs, state_k1),
        divergence={f.value: value for f, value in divergence_defect(dofs, state_k1).items()},
        divergence_scale=max(float(np.linalg.norm(np.concatenate([u_f, u_m]))), rhs_norm),
        energy=energy_report(state_k, state_k1, params, material, dofs),
    )
    diagnostics.thermal_work = params.dt * diagnostics.energy.D_thermal / params.sigma
    diagnostics.dissipation_work = params.dt * diagnostics.energy.D_sigma
    diagnostics.min_substep_slack = diagnostics.energy.slack
    logger.debug("step %d t=%.6g: %d Picard iterations, update %.3e, slack %s", step, state_k1.t,
                 diagnostics.picard_iterations, diagnostics.update_norm,
                 "n/a" if diagnostics.energy.slack is None else f"{diagnostics.energy.slack:.3e}")
    return state_k1, diagnostics
