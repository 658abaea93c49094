"""Experiment drivers. Each returns a JSON-ready report with pass/fail flags."""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from rich.console import Console
from rich.table import Table

from src.config import Config, compile_expression
from src.core.diagnostics import (cumulative_energy_check, gronwall_weight, temperature_decay_check,
                                  uniqueness_metrics)
from src.core.engine import SimulationEngine, step_count
from src.core.enums import ClampMode, CoefficientKind, ExperimentKind, Field, NormKind
from src.core.errors import ConfigError, RunAbortedError
from src.core.fem import DofMap, apply_constraints, field_norm, interpolate, l2_error
from src.core.model import dirichlet_eigenpair
from src.core.state import State, Trajectory
from src.output import write_outputs

logger = logging.getLogger(__name__)

MIN_LEVELS = 3
CAUCHY_SLACK = 0.10
BRINKMAN_RATIO = 4.0
TEMPORAL_ORDER_RANGE = (0.7, 1.5)
EIGENMODE_ORDER = 0.9
GRONWALL_SPREAD = 2.0
GRONWALL_LIMIT = 1e3
IDENTICAL_RTOL = 1e-20
TWIN_TOL = 1e-5
MMS_ORDERS = {"velocity": 1.8, "temperature": 1.8, "pressure": 1.5}


@dataclass
class RunOutcome:
    engine: SimulationEngine
    trajectory: Trajectory
    aborted: Optional[str] = None

    @property
    def dofs(self) -> DofMap:
        return self.engine.dofs

    @property
    def final(self) -> State:
        return self.trajectory.final


def execute(config: Config, dump_dir: Optional[Union[str, Path]] = None, n_steps: Optional[int] = None,
            initial: Optional[State] = None) -> RunOutcome:
    """Run one configuration, optionally from a replacement initial state; aborts are captured."""
    engine = SimulationEngine(dump_dir)
    engine.initialize(config)
    if initial is not None:
        engine.set_initial_state(initial)
    try:
        trajectory = engine.run(n_steps)
        return RunOutcome(engine, trajectory)
    except RunAbortedError as e:
        logger.error("%s", e)
        return RunOutcome(engine, e.trajectory, str(e))


def state_distance(a: State, b: State, dofs: DofMap, fields: Sequence[Field] = (Field.U_F, Field.U_M, Field.THETA)) -> float:
    return math.sqrt(sum(field_norm(dofs, f, a[f] - b[f], NormKind.L2) ** 2 for f in fields))


def _orders(errors: Sequence[Optional[float]], ratio: float = 2.0) -> List[Optional[float]]:
    """log_ratio(e_l / e_{l+1}); None where either value is missing or zero."""
    out = []
    for e0, e1 in zip(errors[:-1], errors[1:]):
        out.append(math.log(e0 / e1) / math.log(ratio) if e0 and e1 else None)
    return out


def _require_levels(levels: int):
    if levels < MIN_LEVELS:
        raise ConfigError(f"experiment needs at least {MIN_LEVELS} levels, got {levels}")


def _base_report(kind: ExperimentKind, config: Config) -> Dict[str, Any]:
    return {"kind": kind.value, "config_hash": config.config_hash(), "source": config.source}


def run_experiment(config: Config, out_dir: Union[str, Path], dump_dir: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """The standard run: trajectory files plus the certificate summary."""
    outcome = execute(config, dump_dir)
    trajectory, engine = outcome.trajectory, outcome.engine
    write_outputs(trajectory, engine.mesh, engine.dofs, out_dir, config.output.snapshot_stride)
    slacks = [d.min_substep_slack for d in trajectory.diagnostics if d.min_substep_slack is not None]
    certified = engine.certifies_energy
    report = _base_report(ExperimentKind.RUN, config)
    report.update({
        "steps": trajectory.steps,
        "final_time": trajectory.final.t,
        "dt": engine.params.dt,
        "sigma": engine.params.sigma,
        "sigma_calibrated": engine.sigma_calibrated,
        "aborted": outcome.aborted,
        "halved_steps": [d.step for d in trajectory.diagnostics if d.halvings],
        "min_slack": min(slacks) if slacks else None,
        "slack_floor": engine.slack_floor,
        "max_interface_flux": max((d.interface_flux for d in trajectory.diagnostics), default=0.0),
        "temperature_decay": temperature_decay_check(trajectory, engine.dofs) if certified else None,
        "cumulative_energy": cumulative_energy_check(trajectory) if certified else None,
        "final_norms": {f.value: field_norm(engine.dofs, f, trajectory.final[f], NormKind.L2)
                        for f in (Field.U_F, Field.U_M, Field.THETA)},
        "certificate_failures": engine.certificate_failures,
        "informational_failures": engine.informational_failures,
        "wall_time": trajectory.metadata.get("wall_time"),
    })
    report["passed"] = outcome.aborted is None and not engine.certificate_failures
    return report


def xi_sweep(config: Config, levels: Optional[int] = None) -> Dict[str, Any]:
    """Runs at xi0 / 2^l: Cauchy behaviour of the final velocities and the bound on xi |grad u_m|^2."""
    levels = config.experiment.levels if levels is None else levels
    _require_levels(levels)
    rows, finals = [], []
    for level in range(levels):
        xi = config.scheme.xi / 2 ** level
        outcome = execute(config.replace(scheme={"xi": xi}))
        failed = outcome.aborted is not None
        brinkman = max(xi * field_norm(outcome.dofs, Field.U_M, s.u_m, NormKind.H1_SEMI) ** 2
                       for s in outcome.trajectory.states)
        rows.append({"level": level, "xi": xi, "failed": failed, "brinkman_max": brinkman,
                     "steps": outcome.trajectory.steps})
        finals.append(None if failed else outcome)
        logger.info("xi-sweep level %d: xi=%.3e, max xi|grad u_m|^2 = %.6e", level, xi, brinkman)

    differences: List[Optional[float]] = []
    for a, b in zip(finals[:-1], finals[1:]):
        differences.append(None if a is None or b is None else
                           state_distance(a.final, b.final, a.dofs, (Field.U_F, Field.U_M)))
    known = [d for d in differences if d is not None]
    cauchy = all(d1 <= d0 * (1.0 + CAUCHY_SLACK) for d0, d1 in zip(known[:-1], known[1:]))
    bounds = [r["brinkman_max"] for r in rows if not r["failed"]]
    ratio = 1.0 if not bounds or max(bounds) == 0.0 else (max(bounds) / min(bounds) if min(bounds) > 0.0 else math.inf)

    report = _base_report(ExperimentKind.XI_SWEEP, config)
    report.update({"levels": rows, "differences": differences, "cauchy": cauchy,
                   "brinkman_ratio": ratio, "uniform_bound": ratio <= BRINKMAN_RATIO})
    report["passed"] = not any(r["failed"] for r in rows) and cauchy and ratio <= BRINKMAN_RATIO
    return report


def _constant_conductivity(config: Config) -> Optional[float]:
    lam_f, lam_m = config.material.lambda_f, config.material.lambda_m
    if lam_f.get("kind") == lam_m.get("kind") == CoefficientKind.CONSTANT.value and lam_f["value"] == lam_m["value"]:
        return float(lam_f["value"])
    return None


def dt_refine(config: Config, levels: Optional[int] = None) -> Dict[str, Any]:
    """Runs at dt0 / 2^l; successive final-state differences, their orders and, for an eigenmode
    start without buoyancy, errors against exp(-lambda_h t) theta0."""
    levels = config.experiment.levels if levels is None else levels
    _require_levels(levels)
    lam = _constant_conductivity(config)
    oracle = config.initial.theta_is_eigenmode and not config.scheme.buoyancy and lam is not None
    rows, outcomes = [], []
    eigenvalue = None
    for level in range(levels):
        dt = config.scheme.dt / 2 ** level
        outcome = execute(config.replace(scheme={"dt": dt}))
        row = {"level": level, "dt": outcome.engine.params.dt, "failed": outcome.aborted is not None,
               "steps": outcome.trajectory.steps}
        if oracle and not row["failed"]:
            if eigenvalue is None:
                eigenvalue = lam * dirichlet_eigenpair(outcome.dofs)[0]
            theta0 = outcome.trajectory.initial.theta
            n, realized = outcome.trajectory.steps, outcome.engine.params.dt
            discrete = theta0 * (1.0 + realized * eigenvalue) ** -n
            continuous = theta0 * math.exp(-eigenvalue * outcome.final.t)
            row["iterate_deviation"] = field_norm(outcome.dofs, Field.THETA, outcome.final.theta - discrete, NormKind.L2)
            row["oracle_error"] = field_norm(outcome.dofs, Field.THETA, outcome.final.theta - continuous, NormKind.L2)
        rows.append(row)
        outcomes.append(None if row["failed"] else outcome)
        logger.info("dt-refine level %d: dt=%.4e, %d steps", level, row["dt"], row["steps"])

    differences = [None if a is None or b is None else state_distance(a.final, b.final, a.dofs)
                   for a, b in zip(outcomes[:-1], outcomes[1:])]
    orders = _orders(differences)
    defined = [p for p in orders if p is not None]
    known = [d for d in differences if d is not None]
    decreasing = all(d1 < d0 for d0, d1 in zip(known[:-1], known[1:])) or all(d == 0.0 for d in known)
    in_range = all(TEMPORAL_ORDER_RANGE[0] <= p <= TEMPORAL_ORDER_RANGE[1] for p in defined)

    report = _base_report(ExperimentKind.DT_REFINE, config)
    report.update({"levels": rows, "differences": differences,
                   "orders": [p if p is not None else "undefined" for p in orders],
                   "strictly_decreasing": decreasing, "orders_in_range": in_range})
    passed = not any(r["failed"] for r in rows) and decreasing and in_range
    if oracle:
        oracle_orders = _orders([r.get("oracle_error") for r in rows])
        report["eigenvalue"] = eigenvalue
        report["oracle_orders"] = [p if p is not None else "undefined" for p in oracle_orders]
        oracle_ok = all(p is not None and p >= EIGENMODE_ORDER for p in oracle_orders)
        report["oracle_passed"] = oracle_ok
        passed = passed and oracle_ok
    report["passed"] = passed
    return report


def interior_bump(dofs: DofMap) -> np.ndarray:
    """Unit-L2 temperature perturbation sin^2(pi x / Lx) sin^2(pi y / H), zero on the boundary."""
    geometry = dofs.mesh.geometry
    chi = interpolate(dofs, Field.THETA, lambda x, y: (np.sin(np.pi * x / geometry.width)
                                                     * np.sin(np.pi * y / geometry.total_height)) ** 2)
    chi = apply_constraints(dofs, Field.THETA, chi)
    norm = field_norm(dofs, Field.THETA, chi, NormKind.L2)
    return chi / norm if norm > 0.0 else chi


def _difference_history(a: Trajectory, b: Trajectory, material, dofs: DofMap) -> List[float]:
    """d(t) = |du_f|^2 + varpi |du_m|^2 + |dtheta|^2 along two trajectories."""
    return [uniqueness_metrics(sa, sb, material, dofs).distance for sa, sb in zip(a.states, b.states)]


def fitted_gronwall_constant(d: Sequence[float], H: Sequence[float]) -> Optional[float]:
    """max_k log(d_k / d_0) / H_k over the steps with d_k > 0."""
    if not d or d[0] <= 0.0:
        return None
    values = [math.log(dk / d[0]) / Hk for dk, Hk in zip(d[1:], H[1:]) if dk > 0.0 and Hk > 0.0]
    return max(values) if values else None


def uniqueness(config: Config, amplitude: Optional[float] = None) -> Dict[str, Any]:
    """Twin runs from theta0 and theta0 + a chi; fits the Gronwall constant per amplitude."""
    amplitudes = sorted(set(config.experiment.amplitudes) | {config.experiment.amplitude if amplitude is None else amplitude})
    if any(a < 0.0 for a in amplitudes):
        raise ConfigError("perturbation amplitudes must be nonnegative")
    reference = execute(config)
    if reference.aborted:
        report = _base_report(ExperimentKind.UNIQUENESS, config)
        report.update({"aborted": reference.aborted, "passed": False})
        return report
    dofs, engine = reference.dofs, reference.engine
    chi = interior_bump(dofs)
    weights = [gronwall_weight(s, dofs) for s in reference.trajectory.states]
    times = reference.trajectory.times
    H = [0.0] + list(np.cumsum(np.diff(times) * np.asarray(weights[1:])))

    initial = reference.trajectory.initial
    identical = execute(config, initial=initial)
    d_zero = _difference_history(reference.trajectory, identical.trajectory, engine.material, dofs)
    scale = max(1.0, field_norm(dofs, Field.THETA, initial.theta, NormKind.L2) ** 2)
    zero_ok = identical.aborted is None and max(d_zero) <= IDENTICAL_RTOL * scale

    rows = []
    for a in amplitudes:
        if a == 0.0:
            continue
        perturbed = execute(config, initial=initial.updated(0.0, {Field.THETA: initial.theta + a * chi}))
        d = _difference_history(reference.trajectory, perturbed.trajectory, engine.material, dofs)
        if d[0] == 0.0:
            raise ConfigError(f"perturbation of amplitude {a} is not resolved on the mesh")
        c_hat = fitted_gronwall_constant(d, H) if perturbed.aborted is None else None
        bound_ok = c_hat is None or d[-1] <= d[0] * math.exp(c_hat * H[-1]) * (1.0 + 1e-12)
        rows.append({"amplitude": a, "d0": d[0], "dT": d[-1], "C_hat": c_hat, "failed": perturbed.aborted is not None,
                     "bound_holds": bound_ok})
        logger.info("uniqueness a=%.1e: d(0)=%.3e, d(T)=%.3e, C_hat=%s", a, d[0], d[-1],
                    "n/a" if c_hat is None else f"{c_hat:.4g}")

    constants = [r["C_hat"] for r in rows if r["C_hat"] is not None]
    magnitudes = [abs(c) for c in constants]
    if not constants:
        stable = True
    elif max(magnitudes) == 0.0:
        stable = True
    else:
        same_sign = all(c > 0.0 for c in constants) or all(c < 0.0 for c in constants)
        stable = same_sign and max(magnitudes) <= GRONWALL_SPREAD * min(magnitudes)
    finite = all(math.isfinite(c) and c < GRONWALL_LIMIT for c in constants)

    report = _base_report(ExperimentKind.UNIQUENESS, config)
    report.update({"H_T": H[-1], "zero_amplitude_max_d": max(d_zero), "zero_amplitude_identical": zero_ok,
                   "amplitudes": rows, "C_hat_stable": stable, "C_hat_finite": finite})
    passed = zero_ok and stable and finite and all(not r["failed"] and r["bound_holds"] for r in rows)

    twins = config.experiment.twin_picard_tols
    if twins is not None:
        n = min(engine.n_steps, step_count(config.experiment.twin_time, engine.params.dt))
        runs = [execute(config.replace(scheme={"picard_tol": tol}), n_steps=n) for tol in twins]
        distance = state_distance(runs[0].final, runs[1].final, runs[0].dofs)
        report["tolerance_twins"] = {"picard_tols": twins, "t": runs[0].final.t, "distance": distance,
                                     "passed": distance <= TWIN_TOL}
        passed = passed and distance <= TWIN_TOL
    report["reference_h_T"] = weights[-1]
    report["passed"] = passed
    return report


def _mms_fields(mode: ClampMode):
    if mode is ClampMode.FREE:
        return Field.U_F, Field.P_F
    return Field.U_M, Field.P_M


def mms(config: Config, mesh_levels: Optional[Sequence[int]] = None) -> Dict[str, Any]:
    """Per-subdomain manufactured-solution errors on refined meshes with dt = h^2."""
    mode = config.scheme.clamp
    sources = config.scheme.sources
    if mode is ClampMode.NONE or not sources or not sources.get("exact"):
        raise ConfigError("mms needs scheme.clamp 'free' or 'matrix' and scheme.sources with exact fields")
    velocity, pressure = _mms_fields(mode)
    exact = sources["exact"]
    missing = [f.value for f in (velocity, pressure, Field.THETA) if f.value not in exact]
    if missing:
        raise ConfigError(f"scheme.sources.exact lacks {missing}")
    solutions = {f: compile_expression(exact[f.value]) for f in (velocity, pressure, Field.THETA)}
    geometry = config.geometry
    rows = []
    for n in mesh_levels or config.experiment.mesh_levels:
        h = geometry.Lx / n
        level = config.replace(
            geometry={"nx": n, "ny_f": max(1, round(n * geometry.Hf / geometry.Lx)),
                      "ny_m": max(1, round(n * geometry.Hm / geometry.Lx))},
            scheme={"dt": h * h})
        outcome = execute(level)
        row = {"n": n, "h": h, "dt": outcome.engine.params.dt, "failed": outcome.aborted is not None}
        if not row["failed"]:
            t = outcome.final.t
            for name, f, zero_mean in (("velocity", velocity, False), ("pressure", pressure, True),
                                       ("temperature", Field.THETA, False)):
                fn = solutions[f]
                row[name] = l2_error(outcome.dofs, f, outcome.final[f], lambda x, y, fn=fn: fn(x, y, t),
                                     subtract_mean=zero_mean)
        rows.append(row)
        logger.info("mms level n=%d: %s", n, {k: row.get(k) for k in MMS_ORDERS})

    hs = [r["h"] for r in rows]
    orders = {}
    for name in MMS_ORDERS:
        errors = [r.get(name) for r in rows]
        orders[name] = [None if not (e0 and e1) else math.log(e0 / e1) / math.log(h0 / h1)
                        for e0, e1, h0, h1 in zip(errors[:-1], errors[1:], hs[:-1], hs[1:])]
    finest = {name: (values[-1] if values else None) for name, values in orders.items()}
    passed = not any(r["failed"] for r in rows) and all(
        finest[name] is not None and finest[name] >= threshold for name, threshold in MMS_ORDERS.items())

    report = _base_report(ExperimentKind.MMS, config)
    report.update({"mode": mode.value, "levels": rows, "orders": orders, "thresholds": MMS_ORDERS,
                   "passed": passed})
    return report


def summary_table(report: Dict[str, Any]) -> Table:
    """Per-level table of a report for the console."""
    table = Table(title=f"{report['kind']} ({'passed' if report.get('passed') else 'FAILED'})")
    rows = report.get("levels") or report.get("amplitudes")
    if isinstance(rows, list) and rows:
        columns = list(rows[0].keys())
        for column in columns:
            table.add_column(column)
        for row in rows:
            table.add_row(*[_cell(row.get(c)) for c in columns])
    else:
        table.add_column("quantity")
        table.add_column("value")
        for key, value in report.items():
            if not isinstance(value, (dict, list)):
                table.add_row(key, _cell(value))
    return table


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return "-" if value is None else str(value)


def print_summary(report: Dict[str, Any], console: Optional[Console] = None):
    (console or Console()).print(summary_table(report))


EXPERIMENTS = {
    ExperimentKind.XI_SWEEP: xi_sweep,
    ExperimentKind.DT_REFINE: dt_refine,
    ExperimentKind.UNIQUENESS: uniqueness,
    ExperimentKind.MMS: mms,
}
