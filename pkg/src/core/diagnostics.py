"""Energy functionals, the discrete energy certificate, the Z-norm constant and uniqueness metrics."""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh, null_space
from scipy.sparse.linalg import splu

from .assembly import (bjsj_coefficient, divergence_matrix, interface_coupling, scalar_mass, scalar_stiffness,
                       tangential_matrix, viscous_matrix)
from .enums import Field, NormKind, Region
from .errors import CertificateUndefinedError, NumericalError, ParameterError
from .fem import DofMap, field_gradients, field_norm, field_values, interface_values
from .model import MaterialModel, SchemeParams
from .state import State, Trajectory

logger = logging.getLogger(__name__)

DENSE_KORN_LIMIT = 2500
KORN_TOL = 1e-10
KORN_MAX_ITER = 10_000


@dataclass
class Dissipation:
    viscous: float = 0.0
    darcy: float = 0.0
    bjsj: float = 0.0
    thermal: float = 0.0
    brinkman: float = 0.0

    @property
    def d_sigma(self) -> float:
        return self.viscous + self.darcy + self.bjsj + self.thermal

    @property
    def full(self) -> float:
        return self.d_sigma + self.brinkman


@dataclass
class EnergyReport:
    E_sigma: float
    kinetic_f: float
    kinetic_m: float
    thermal: float
    E_previous: Optional[float] = None
    D_viscous: float = 0.0
    D_darcy: float = 0.0
    D_bjsj: float = 0.0
    D_thermal: float = 0.0
    D_brinkman: float = 0.0
    R: float = 0.0
    increment_f: float = 0.0
    increment_m: float = 0.0
    increment_theta: float = 0.0
    slack: Optional[float] = None
    identity_residual: Optional[float] = None

    @property
    def D_sigma(self) -> float:
        return self.D_viscous + self.D_darcy + self.D_bjsj + self.D_thermal

    def to_dict(self) -> Dict[str, Optional[float]]:
        return asdict(self)


def _l2_squared(dofs: DofMap, f: Field, coeffs: np.ndarray, region: Optional[Region] = None) -> float:
    return field_norm(dofs, f, coeffs, NormKind.L2, region) ** 2


def total_energy(state: State, sigma: float, varpi: float, dofs: DofMap) -> EnergyReport:
    kinetic_f = 0.5 * _l2_squared(dofs, Field.U_F, state.u_f)
    kinetic_m = 0.5 * varpi * _l2_squared(dofs, Field.U_M, state.u_m)
    thermal = 0.5 * sigma * _l2_squared(dofs, Field.THETA, state.theta)
    return EnergyReport(E_sigma=kinetic_f + kinetic_m + thermal, kinetic_f=kinetic_f,
                        kinetic_m=kinetic_m, thermal=thermal)


def _symmetric_gradient_squared(dofs: DofMap, u_f: np.ndarray, weight: Optional[np.ndarray] = None) -> float:
    cq = dofs.quadrature(Region.FREE)
    G = field_gradients(dofs[Field.U_F], u_f, cq)
    D = 0.5 * (G + np.swapaxes(G, -1, -2))
    w = cq.weights if weight is None else cq.weights * weight
    return float((w * (D ** 2).sum(axis=(-1, -2))).sum())


def _tangential_trace_squared(dofs: DofMap, u_f: np.ndarray, weight: Optional[np.ndarray] = None) -> float:
    iq = dofs.interface_quadrature()
    values = interface_values(dofs[Field.U_F], u_f, iq)
    slip = np.einsum("nqi,ni->nq", values, iq.tangents)
    w = iq.weights if weight is None else iq.weights * weight
    return float((w * slip ** 2).sum())


def dissipation(state_k1: State, state_k: State, material: MaterialModel, params: SchemeParams,
                dofs: DofMap) -> Dissipation:
    """Dissipation of state_k1 with coefficients lagged at theta of state_k."""
    theta_space = dofs[Field.THETA]
    cq_f, cq_m = dofs.quadrature(Region.FREE), dofs.quadrature(Region.MATRIX)
    nu_f = material.nu(field_values(theta_space, state_k.theta, cq_f))
    nu_m = material.nu(field_values(theta_space, state_k.theta, cq_m))
    kappa_m = material.kappa(cq_m.points[..., 0], cq_m.points[..., 1])

    u_m = field_values(dofs[Field.U_M], state_k1.u_m, cq_m)
    darcy = float((cq_m.weights * nu_m / kappa_m * (u_m ** 2).sum(axis=-1)).sum())

    thermal = 0.0
    for region, cq in ((Region.FREE, cq_f), (Region.MATRIX, cq_m)):
        lam = material.lam(region)(field_values(theta_space, state_k.theta, cq))
        grad = field_gradients(theta_space, state_k1.theta, cq)
        thermal += float((cq.weights * lam * (grad ** 2).sum(axis=-1)).sum())

    return Dissipation(
        viscous=2.0 * _symmetric_gradient_squared(dofs, state_k1.u_f, nu_f),
        darcy=darcy,
        bjsj=_tangential_trace_squared(dofs, state_k1.u_f, bjsj_coefficient(dofs, material, state_k.theta)),
        thermal=params.sigma * thermal,
        brinkman=params.xi * field_norm(dofs, Field.U_M, state_k1.u_m, NormKind.H1_SEMI) ** 2,
    )


def buoyancy_production(state: State, dofs: DofMap) -> float:
    """R = (u . k, theta) over both subdomains."""
    k = dofs.mesh.geometry.k
    total = 0.0
    for region, vf in ((Region.FREE, Field.U_F), (Region.MATRIX, Field.U_M)):
        cq = dofs.quadrature(region)
        u = field_values(dofs[vf], state[vf], cq)
        theta = field_values(dofs[Field.THETA], state.theta, cq)
        total += float((cq.weights * (u @ k) * theta).sum())
    return total


def _increments(state_k: State, state_k1: State, params: SchemeParams, dofs: DofMap) -> Tuple[float, float, float]:
    return (0.5 * _l2_squared(dofs, Field.U_F, state_k1.u_f - state_k.u_f),
            0.5 * params.varpi * _l2_squared(dofs, Field.U_M, state_k1.u_m - state_k.u_m),
            0.5 * params.sigma * _l2_squared(dofs, Field.THETA, state_k1.theta - state_k.theta))


def energy_report(state_k: State, state_k1: State, params: SchemeParams, material: MaterialModel,
                  dofs: DofMap) -> EnergyReport:
    """Energy of state_k1, the step's dissipation and, without sources, the certificate slack.

    slack carries the weights of the step inequality; identity_residual is
    E(k) - E(k+1) - increments - dt (D_full - R), zero at an exact fixed point.
    """
    before = total_energy(state_k, params.sigma, params.varpi, dofs)
    report = total_energy(state_k1, params.sigma, params.varpi, dofs)
    d = dissipation(state_k1, state_k, material, params, dofs)
    inc_f, inc_m, inc_theta = _increments(state_k, state_k1, params, dofs)
    report.E_previous = before.E_sigma
    report.D_viscous, report.D_darcy, report.D_bjsj = d.viscous, d.darcy, d.bjsj
    report.D_thermal, report.D_brinkman = d.thermal, d.brinkman
    report.R = buoyancy_production(state_k1, dofs) if params.buoyancy else 0.0
    report.increment_f, report.increment_m, report.increment_theta = inc_f, inc_m, inc_theta
    if not params.has_sources:
        drop = before.E_sigma - report.E_sigma - inc_f - inc_m - inc_theta
        report.slack = drop - params.dt * (0.5 * d.viscous + 0.5 * d.darcy + 0.5 * d.bjsj
                                           + d.brinkman + 0.5 * d.thermal)
        report.identity_residual = drop - params.dt * (d.full - report.R)
    return report


def energy_slack(state_k: State, state_k1: State, params: SchemeParams, material: MaterialModel,
                 dofs: DofMap) -> float:
    if params.has_sources:
        raise CertificateUndefinedError("the energy certificate is undefined while source terms are active")
    return energy_report(state_k, state_k1, params, material, dofs).slack


def temperature_decay_check(trajectory: Trajectory, dofs: DofMap) -> float:
    """max_k 1/2|theta^k|^2 + sum_{j<k} dt (lambda grad theta^{j+1}, grad theta^{j+1}) - 1/2|theta^0|^2."""
    initial = 0.5 * _l2_squared(dofs, Field.THETA, trajectory.initial.theta)
    worst, work = 0.0, 0.0
    for state, diag in zip(trajectory.states[1:], trajectory.diagnostics):
        work += diag.thermal_work
        worst = max(worst, 0.5 * _l2_squared(dofs, Field.THETA, state.theta) + work - initial)
    return worst


def cumulative_energy_check(trajectory: Trajectory) -> float:
    """max_k E(k) + 1/2 sum_{j<k} dt D_sigma(j+1) - E(0)."""
    if not trajectory.diagnostics:
        return 0.0
    e0 = trajectory.diagnostics[0].energy.E_previous
    worst, work = 0.0, 0.0
    for diag in trajectory.diagnostics:
        work += 0.5 * diag.dissipation_work
        worst = max(worst, diag.energy.E_sigma + work - e0)
    return worst


def theta_norms(trajectory: Trajectory, dofs: DofMap) -> np.ndarray:
    return np.array([field_norm(dofs, Field.THETA, s.theta, NormKind.L2) for s in trajectory.states])


def symmetric_gradient_norm(dofs: DofMap, u_f: np.ndarray) -> float:
    return math.sqrt(_symmetric_gradient_squared(dofs, u_f))


def z_norm(dofs: DofMap, u_f: np.ndarray, u_m: np.ndarray) -> float:
    """|D u_f|^2 + |u_f . tau|^2 on Gamma_i + |u_m|^2, square-rooted."""
    return math.sqrt(_symmetric_gradient_squared(dofs, u_f) + _tangential_trace_squared(dofs, u_f)
                     + _l2_squared(dofs, Field.U_M, u_m))


def _korn_forms(dofs: DofMap):
    """Z form, H^1_f x L^2_m form and constraint rows on the free velocity dofs."""
    free_f, free_m = dofs[Field.U_F].free, dofs[Field.U_M].free
    z_f = 0.5 * viscous_matrix(dofs, np.ones(dofs.quadrature(Region.FREE).weights.shape)) + tangential_matrix(dofs)
    mass_f = scalar_mass(dofs, Field.U_F)
    h_f = mass_f + scalar_stiffness(dofs, Field.U_F)
    mass_m = scalar_mass(dofs, Field.U_M)
    Z = sp.block_diag([z_f[free_f][:, free_f], mass_m[free_m][:, free_m]], format="csr")
    H = sp.block_diag([h_f[free_f][:, free_f], mass_m[free_m][:, free_m]], format="csr")
    b_f = divergence_matrix(dofs, Field.U_F, Field.P_F)[:, free_f]
    b_m = divergence_matrix(dofs, Field.U_M, Field.P_M)[:, free_m]
    c_f = interface_coupling(dofs, Field.U_F)[:, free_f]
    c_m = interface_coupling(dofs, Field.U_M)[:, free_m]
    C = sp.bmat([[b_f, None], [None, b_m], [c_f, c_m]], format="csr")
    pinned = dofs[Field.P_F].size + dofs[Field.P_M].constrained
    return Z, H, C, pinned


def korn_equivalence(dofs: DofMap) -> Tuple[float, float]:
    """Smallest eigenvalue of the Z form against H^1_f x L^2_m on the constrained velocity space."""
    Z, H, C, pinned = _korn_forms(dofs)
    n = Z.shape[0]
    if n <= DENSE_KORN_LIMIT:
        N = null_space(C.toarray())
        Zr = N.T @ Z.toarray() @ N
        Hr = N.T @ H.toarray() @ N
        lam = float(eigh(0.5 * (Zr + Zr.T), 0.5 * (Hr + Hr.T), eigvals_only=True, subset_by_index=[0, 0])[0])
    else:
        keep = np.setdiff1d(np.arange(C.shape[0]), pinned)
        Cp = C[keep]
        K = sp.bmat([[Z, Cp.T], [Cp, None]], format="csc")
        lu = splu(K)
        x = np.ones(n)
        lam = np.inf
        for _ in range(KORN_MAX_ITER):
            x = lu.solve(np.concatenate([H @ x, np.zeros(Cp.shape[0])]))[:n]
            x /= math.sqrt(x @ (H @ x))
            updated = float(x @ (Z @ x))
            if abs(updated - lam) <= KORN_TOL * updated:
                lam = updated
                break
            lam = updated
        else:
            raise NumericalError(f"Korn inverse iteration did not converge in {KORN_MAX_ITER} steps")
    if not lam > 0.0:
        raise NumericalError(f"Z form is not positive on the constrained space (lambda_min = {lam:.3e})")
    c_z = lam ** -0.5
    logger.info("Korn equivalence: lambda_min = %.6g, C_Z = %.6g", lam, c_z)
    return lam, c_z


@dataclass
class UniquenessMetrics:
    du_f: float
    du_m: float
    dtheta: float
    z_norm: float
    h: float

    @property
    def distance(self) -> float:
        return self.du_f + self.du_m + self.dtheta


def gronwall_weight(state: State, dofs: DofMap) -> float:
    """h = |u_f|^4_{W^{1,6}} + |u_m|^4_{L^6} + |grad theta|^8_{L^4} + 1."""
    w16 = (field_norm(dofs, Field.U_F, state.u_f, NormKind.L6) ** 6
           + field_norm(dofs, Field.U_F, state.u_f, NormKind.W16_SEMI) ** 6) ** (1.0 / 6.0)
    l6 = field_norm(dofs, Field.U_M, state.u_m, NormKind.L6)
    cq = dofs.quadrature(None)
    grad = field_gradients(dofs[Field.THETA], state.theta, cq)
    l4 = float((cq.weights * ((grad ** 2).sum(axis=-1)) ** 2).sum()) ** 0.25
    return w16 ** 4 + l6 ** 4 + l4 ** 8 + 1.0


def uniqueness_metrics(state_a: State, state_b: State, material: MaterialModel, dofs: DofMap) -> UniquenessMetrics:
    try:
        state_a.check(dofs)
        state_b.check(dofs)
    except ParameterError as e:
        raise ParameterError(f"states do not share the dof map: {e}") from e
    du_f = state_a.u_f - state_b.u_f
    du_m = state_a.u_m - state_b.u_m
    return UniquenessMetrics(
        du_f=_l2_squared(dofs, Field.U_F, du_f),
        du_m=material.varpi * _l2_squared(dofs, Field.U_M, du_m),
        dtheta=_l2_squared(dofs, Field.THETA, state_a.theta - state_b.theta),
        z_norm=z_norm(dofs, du_f, du_m),
        h=gronwall_weight(state_a, dofs),
    )
