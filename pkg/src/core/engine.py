"""Run setup from a Config and the time loop with step halving and certificate checks."""
import logging
import math
import time
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from scipy.io import mmwrite

from src.config import Config, GeometryConfig, InitialConfig, MaterialConfig, SchemeConfig, compile_expression
from .assembly import (apply_boundary_conditions, assemble_momentum, assemble_projection, assemble_temperature,
                       divergence_defect)
from .diagnostics import cumulative_energy_check, korn_equivalence, temperature_decay_check, total_energy
from .enums import ClampMode, Field, FIELD_ORDER, InterfaceLaw, NormKind
from .errors import NumericalError, ParameterError, RunAbortedError
from .fem import DofMap, apply_constraints, build_dof_map, field_norm, interpolate
from .mesh import DecomposedMesh, GeometrySpec, build_decomposed_mesh, validate_mesh
from .model import (MaterialModel, SchemeParams, SourceTerms, calibrate_sigma, dirichlet_eigenpair,
                    make_material, poincare_constant)
from .state import State, StepDiagnostics, Trajectory
from .stepper import LinearSolver, picard_advance

logger = logging.getLogger(__name__)

MAX_HALVINGS = 3
SLACK_RTOL = 1e-8
ENERGY_FLOOR = 1e-12
FLUX_TOL = 1e-10
DIVERGENCE_FLOOR = 1e-14
DECAY_RTOL = 1e-10


def step_count(final_time: float, dt: float) -> int:
    """N = ceil(T / dt), ignoring round-off in the ratio."""
    return max(1, math.ceil(final_time / dt * (1.0 - 1e-12)))


def build_sources(spec: Optional[Dict]) -> Optional[SourceTerms]:
    if spec is None:
        return None
    terms = {name: compile_expression(spec[name]) if spec.get(name) is not None else None
             for name in ("f_f", "f_m", "g")}
    exact = {Field(name): compile_expression(expr) for name, expr in (spec.get("exact") or {}).items()}
    return SourceTerms(dirichlet=exact, **terms)


class SimulationEngine:
    """Owns mesh, dof map, material and scheme of one run and advances its state."""

    def __init__(self, dump_dir: Optional[Union[str, Path]] = None):
        self.config: Optional[Config] = None
        self.mesh: Optional[DecomposedMesh] = None
        self.dofs: Optional[DofMap] = None
        self.material: Optional[MaterialModel] = None
        self.params: Optional[SchemeParams] = None
        self.state: Optional[State] = None
        self.n_steps = 0
        self.initial_energy = 0.0
        self.trajectory = Trajectory()
        self.certificate_failures: List[Dict[str, object]] = []
        self.informational_failures: List[Dict[str, object]] = []
        self.sigma_calibrated: Optional[float] = None
        self.dump_dir = None if dump_dir is None else Path(dump_dir)
        self.solver: Optional[LinearSolver] = None

    def initialize(self, config: Config):
        """Build everything a run needs from a validated configuration."""
        self.config = config
        self.certificate_failures = []
        self.informational_failures = []
        self.sigma_calibrated = None
        self._setup_mesh(config.geometry, config.scheme.clamp)
        self._setup_material(config.material)
        self._setup_scheme(config.scheme)
        self._setup_initial_state(config.initial)

    def _setup_mesh(self, geometry: GeometryConfig, clamp: ClampMode):
        spec = GeometrySpec(width=geometry.Lx, porous_height=geometry.Hm, free_height=geometry.Hf)
        self.mesh = build_decomposed_mesh(spec, geometry.nx, geometry.ny_f, geometry.ny_m)
        violations = validate_mesh(self.mesh)
        if violations:
            raise ParameterError(f"mesh is invalid: {violations[0].kind} at {violations[0].entity}: "
                                 f"{violations[0].message}")
        self.dofs = build_dof_map(self.mesh, clamp)

    def _setup_material(self, material: MaterialConfig):
        self.material = make_material(material.to_dict(), self.dofs)

    def _setup_scheme(self, scheme: SchemeConfig):
        self.n_steps = step_count(scheme.final_time, scheme.dt)
        if scheme.sigma == "auto":
            sigma = self.sigma_calibrated = self._calibrated_sigma()
        else:
            sigma = scheme.sigma
        self.params = SchemeParams(
            dt=scheme.final_time / self.n_steps, xi=scheme.xi, sigma=sigma, final_time=scheme.final_time,
            picard_tol=scheme.picard_tol, picard_max=scheme.picard_max,
            linear_tol=scheme.linear_tol, linear_max=scheme.linear_max,
            varpi=self.material.varpi, sources=build_sources(scheme.sources), buoyancy=scheme.buoyancy,
            interface_law=scheme.interface_law, linear_solver=scheme.linear_solver,
        )
        self.solver = LinearSolver.from_params(self.params)
        logger.info("scheme: %d steps of dt=%.6g, xi=%.3g, sigma=%.6g, varpi=%.3g", self.n_steps,
                    self.params.dt, self.params.xi, self.params.sigma, self.params.varpi)

    def _boundary_values(self, f: Field, t: float) -> Optional[np.ndarray]:
        sources = self.params.sources
        if sources is None or f not in sources.dirichlet:
            return None
        fn = sources.dirichlet[f]
        return interpolate(self.dofs, f, lambda x, y: fn(x, y, t))

    def _setup_initial_state(self, initial: InitialConfig):
        dofs = self.dofs
        u_f = compile_expression(initial.u_f)
        u_m = compile_expression(initial.u_m)
        u_f0 = apply_constraints(dofs, Field.U_F, interpolate(dofs, Field.U_F, lambda x, y: u_f(x, y, 0.0)),
                                 self._boundary_values(Field.U_F, 0.0))
        u_m0 = apply_constraints(dofs, Field.U_M, interpolate(dofs, Field.U_M, lambda x, y: u_m(x, y, 0.0)),
                                 self._boundary_values(Field.U_M, 0.0))
        if initial.theta_is_eigenmode:
            theta0 = dirichlet_eigenpair(dofs)[1]
        else:
            theta = compile_expression(initial.theta)
            theta0 = interpolate(dofs, Field.THETA, lambda x, y: theta(x, y, 0.0))
        theta0 = apply_constraints(dofs, Field.THETA, theta0, self._boundary_values(Field.THETA, 0.0))

        projection = apply_boundary_conditions(assemble_projection(dofs, u_f0, u_m0, self.params, 0.0), dofs)
        solution, _ = self.solver.solve(projection.matrix, projection.rhs)
        fields = projection.split(solution)
        if self.params.varpi == 0.0:
            fields[Field.U_M] = dofs.zeros(Field.U_M)
        fields[Field.THETA] = theta0
        self.set_initial_state(State.from_fields(0.0, fields))

    def set_initial_state(self, state: State):
        """Start a fresh trajectory from state."""
        state.check(self.dofs)
        self.state = state
        self.initial_energy = total_energy(state, self.params.sigma, self.params.varpi, self.dofs).E_sigma
        self.certificate_failures = []
        self.informational_failures = []
        self.trajectory = Trajectory(states=[state], metadata={
            "config_hash": self.config.config_hash() if self.config is not None else None,
            "source": self.config.source if self.config is not None else None,
            "n_steps": self.n_steps,
            "dt": self.params.dt,
            "sigma": self.params.sigma,
        })

    @property
    def slack_floor(self) -> float:
        return -SLACK_RTOL * max(self.initial_energy, ENERGY_FLOOR)

    @property
    def certifies_energy(self) -> bool:
        return not self.params.has_sources and self.params.interface_law is InterfaceLaw.LIONS

    def _calibrated_sigma(self) -> float:
        return calibrate_sigma(self.material, poincare_constant(self.dofs), korn_equivalence(self.dofs)[1])

    @property
    def energy_binding(self) -> bool:
        """Energy certificates bind only for sigma at or above the calibrated value."""
        if self.sigma_calibrated is None:
            self.sigma_calibrated = self._calibrated_sigma()
        return self.params.sigma >= self.sigma_calibrated

    def _substeps(self, state: State, halvings: int, step: int):
        count = 2 ** halvings
        params = self.params if halvings == 0 else self.params.with_dt(self.params.dt / count)
        records: List[StepDiagnostics] = []
        for _ in range(count):
            state, diagnostics = picard_advance(state, params, self.material, self.dofs, self.solver, step)
            records.append(diagnostics)
        if count == 1:
            return state, records[0]
        merged = records[-1]
        slacks = [r.min_substep_slack for r in records]
        merged.dt = self.params.dt
        merged.halvings = halvings
        merged.picard_iterations = sum(r.picard_iterations for r in records)
        merged.linear_iterations = [n for r in records for n in r.linear_iterations]
        merged.thermal_work = sum(r.thermal_work for r in records)
        merged.dissipation_work = sum(r.dissipation_work for r in records)
        merged.divergence = {name: max(r.divergence[name] for r in records) for name in merged.divergence}
        merged.divergence_scale = max(r.divergence_scale for r in records)
        merged.min_substep_slack = None if any(s is None for s in slacks) else min(slacks)
        merged.energy.E_previous = records[0].energy.E_previous
        merged.energy.slack = merged.min_substep_slack
        merged.energy.identity_residual = None
        return state, merged

    def advance(self) -> StepDiagnostics:
        """One accepted step, retried with 2, 4, 8 substeps when the Picard iteration or a solve fails."""
        step = self.trajectory.steps + 1
        for halvings in range(MAX_HALVINGS + 1):
            try:
                state, diagnostics = self._substeps(self.state, halvings, step)
                break
            except NumericalError as e:
                if halvings == MAX_HALVINGS:
                    raise RunAbortedError(f"step {step} at t={self.state.t:.6g} failed after "
                                          f"{MAX_HALVINGS} halvings: {e}", self.trajectory) from e
                logger.warning("step %d at t=%.6g failed (%s); retrying with %d substeps",
                               step, self.state.t, e, 2 ** (halvings + 1))
        if step == 1 and self.dump_dir is not None:
            self._dump_systems(self.state, state)
        self._check_step(diagnostics, state)
        self.trajectory.append(state, diagnostics)
        self.state = state
        return diagnostics

    def _fail(self, step: int, kind: str, value: float, limit: float, informational: bool = False):
        record = {"step": step, "kind": kind, "value": value, "limit": limit}
        if informational:
            self.informational_failures.append(record)
            logger.warning("certificate %s not met at step %d with sigma below its calibrated value: %.6e "
                           "(limit %.6e)", kind, step, value, limit)
            return
        self.certificate_failures.append(record)
        logger.error("certificate %s failed at step %d: %.6e (limit %.6e)", kind, step, value, limit)

    def _check_step(self, diagnostics: StepDiagnostics, state: State):
        if diagnostics.interface_flux > FLUX_TOL:
            self._fail(diagnostics.step, "interface_flux", diagnostics.interface_flux, FLUX_TOL)
        limit = self.params.linear_tol * diagnostics.divergence_scale + DIVERGENCE_FLOOR
        for f, measured in divergence_defect(self.dofs, state).items():
            value = max(measured, diagnostics.divergence.get(f.value, 0.0))
            diagnostics.divergence[f.value] = value
            if value > limit:
                self._fail(diagnostics.step, f"divergence_{f.value}", value, limit)
        prescribed = {f: self._boundary_values(f, state.t) for f in FIELD_ORDER}
        for f, defect in state.constraint_defects(self.dofs, prescribed).items():
            if defect > 0.0:
                self._fail(diagnostics.step, f"constrained_{f.value}", defect, 0.0)
        slack = diagnostics.min_substep_slack
        if self.certifies_energy and slack is not None and slack < self.slack_floor:
            self._fail(diagnostics.step, "energy_slack", slack, self.slack_floor, not self.energy_binding)

    def _check_trajectory(self):
        if not self.certifies_energy or not self.trajectory.steps:
            return
        theta0 = field_norm(self.dofs, Field.THETA, self.trajectory.initial.theta, NormKind.L2) ** 2
        decay = temperature_decay_check(self.trajectory, self.dofs)
        decay_limit = DECAY_RTOL * max(theta0, ENERGY_FLOOR)
        if decay > decay_limit:
            self._fail(self.trajectory.steps, "temperature_decay", decay, decay_limit)
        cumulative = cumulative_energy_check(self.trajectory)
        if cumulative > -self.slack_floor:
            self._fail(self.trajectory.steps, "cumulative_energy", cumulative, -self.slack_floor,
                       not self.energy_binding)

    def _dump_systems(self, state_k: State, state_k1: State):
        self.dump_dir.mkdir(parents=True, exist_ok=True)
        momentum = apply_boundary_conditions(assemble_momentum(
            state_k, state_k1.theta, state_k1.u_f, self.params, self.material, self.dofs), self.dofs)
        temperature = apply_boundary_conditions(assemble_temperature(
            state_k, (state_k1.u_f, state_k1.u_m), self.params, self.material, self.dofs), self.dofs)
        for name, system in (("momentum", momentum), ("temperature", temperature)):
            mmwrite(str(self.dump_dir / f"{name}_step1.mtx"), system.matrix)
            mmwrite(str(self.dump_dir / f"{name}_step1_rhs.mtx"), system.rhs[:, None])
        logger.info("wrote step-1 systems to %s", self.dump_dir)

    def run(self, n_steps: Optional[int] = None) -> Trajectory:
        """Advance n_steps (all configured steps by default); partial runs travel in RunAbortedError."""
        start = time.perf_counter()
        try:
            for _ in range(self.n_steps if n_steps is None else n_steps):
                self.advance()
            self._check_trajectory()
        finally:
            self.trajectory.metadata["wall_time"] = time.perf_counter() - start
            self.trajectory.metadata["certificate_failures"] = list(self.certificate_failures)
            self.trajectory.metadata["informational_failures"] = list(self.informational_failures)
        logger.info("run finished: %d steps to t=%.6g, %d certificate failures", self.trajectory.steps,
                    self.state.t, len(self.certificate_failures))
        return self.trajectory


def run_simulation(config: Config, dump_dir: Optional[Union[str, Path]] = None) -> Trajectory:
    engine = SimulationEngine(dump_dir)
    engine.initialize(config)
    return engine.run()
