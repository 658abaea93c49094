"""Sparse systems of one Picard iterate.

Element matrices are computed for all cells at once and scattered into
scipy.sparse COO storage; duplicate entries sum on conversion to CSR.
Local vector dofs are component-major, matching FieldSpace.cell_dofs.
Assembled systems keep constrained dofs as identity rows until
apply_boundary_conditions reduces them away.
"""
import logging
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .enums import Field, InterfaceLaw, MOMENTUM_FIELDS, Region
from .errors import ParameterError
from .fem import DofMap, FieldSpace, field_values, interface_basis, interface_values, interpolate
from .state import State

if TYPE_CHECKING:
    from .model import MaterialModel, SchemeParams

logger = logging.getLogger(__name__)

TEMPERATURE_FIELDS = (Field.THETA,)


@dataclass(frozen=True, eq=False)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    fields: Tuple[Field, ...]
    blocks: Dict[Field, slice]       # ranges in the current layout
    full_blocks: Dict[Field, slice]  # ranges before reduction
    free_index: np.ndarray
    constrained_index: np.ndarray
    prescribed: np.ndarray           # values of the constrained dofs, unreduced layout
    reduced: bool = False

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def split(self, solution: np.ndarray) -> Dict[Field, np.ndarray]:
        """Full per-field vectors from a solution of this system."""
        full = np.asarray(solution, dtype=float)
        if self.reduced:
            full = self.prescribed.copy()
            full[self.free_index] = solution
        return {f: full[self.full_blocks[f]].copy() for f in self.fields}

    def pack(self, state: State) -> np.ndarray:
        full = np.concatenate([state[f] for f in self.fields])
        return full[self.free_index] if self.reduced else full

    def block(self, row: Field, col: Field) -> sp.csr_matrix:
        return self.matrix[self.blocks[row]][:, self.blocks[col]]


def _per_cell(phi: np.ndarray, n: int) -> np.ndarray:
    return np.broadcast_to(phi, (n,) + phi.shape) if phi.ndim == 2 else phi


def _scatter(rows: np.ndarray, cols: np.ndarray, local: np.ndarray, shape) -> sp.csr_matrix:
    I = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    J = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    return sp.coo_matrix((local.ravel(), (I, J)), shape=shape).tocsr()


def _load(rows: np.ndarray, local: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(rows.ravel(), weights=local.ravel(), minlength=size)


def _block_diagonal(local: np.ndarray, components: int) -> np.ndarray:
    if components == 1:
        return local
    n, nb, na = local.shape
    out = np.zeros((n, components * nb, components * na))
    for c in range(components):
        out[:, c * nb:(c + 1) * nb, c * na:(c + 1) * na] = local
    return out


def _component_dofs(space: FieldSpace, nodes: np.ndarray) -> np.ndarray:
    return np.concatenate([nodes + c * space.n_nodes for c in range(space.components)], axis=1)


def _region_of(space: FieldSpace, region: Optional[Region]) -> Optional[Region]:
    return region if region is not None else space.region


def scalar_mass(dofs: DofMap, f: Field, weight: Optional[np.ndarray] = None,
                region: Optional[Region] = None) -> sp.csr_matrix:
    """(w u, v) over the field's region; vector fields get one copy per component."""
    space = dofs[f]
    cq = dofs.quadrature(_region_of(space, region))
    cells = space.cells_of(cq.triangles)
    w = cq.weights if weight is None else cq.weights * weight
    phi = _per_cell(cq.values(space.kind), cq.n_cells)
    local = _block_diagonal(np.einsum("nq,nqb,nqa->nba", w, phi, phi), space.components)
    idx = space.cell_dofs[cells]
    return _scatter(idx, idx, local, (space.size, space.size))


def scalar_stiffness(dofs: DofMap, f: Field, weight: Optional[np.ndarray] = None,
                     region: Optional[Region] = None) -> sp.csr_matrix:
    """(w grad u, grad v) over the field's region."""
    space = dofs[f]
    cq = dofs.quadrature(_region_of(space, region))
    cells = space.cells_of(cq.triangles)
    w = cq.weights if weight is None else cq.weights * weight
    G = cq.gradients(space.kind)
    local = _block_diagonal(np.einsum("nq,nqbi,nqai->nba", w, G, G), space.components)
    idx = space.cell_dofs[cells]
    return _scatter(idx, idx, local, (space.size, space.size))


def viscous_matrix(dofs: DofMap, nu: np.ndarray) -> sp.csr_matrix:
    """2 (nu D(u), D(v)) on the free region, nu given at the free quadrature points."""
    space = dofs[Field.U_F]
    cq = dofs.quadrature(Region.FREE)
    cells = space.cells_of(cq.triangles)
    w = cq.weights * nu
    G = cq.gradients(space.kind)
    nl = G.shape[2]
    laplace = np.einsum("nq,nqbi,nqai->nba", w, G, G)
    local = np.zeros((cq.n_cells, 2 * nl, 2 * nl))
    for d in range(2):
        for c in range(2):
            block = np.einsum("nq,nqa,nqb->nba", w, G[..., d], G[..., c])
            if c == d:
                block = block + laplace
            local[:, d * nl:(d + 1) * nl, c * nl:(c + 1) * nl] = block
    idx = space.cell_dofs[cells]
    return _scatter(idx, idx, local, (space.size, space.size))


def divergence_matrix(dofs: DofMap, velocity: Field, pressure: Field) -> sp.csr_matrix:
    """-(q, div u), rows on the pressure space."""
    u, p = dofs[velocity], dofs[pressure]
    cq = dofs.quadrature(u.region)
    G = cq.gradients(u.kind)
    psi = _per_cell(cq.values(p.kind), cq.n_cells)
    local = np.concatenate([-np.einsum("nq,nqb,nqa->nba", cq.weights, psi, G[..., c]) for c in range(2)], axis=2)
    return _scatter(p.cell_dofs[p.cells_of(cq.triangles)], u.cell_dofs[u.cells_of(cq.triangles)],
                    local, (p.size, u.size))


def interface_coupling(dofs: DofMap, velocity: Field) -> sp.csr_matrix:
    """+-(psi, u . n) on Gamma_i, rows on the multiplier space; u_f enters with +, u_m with -."""
    u, mu = dofs[velocity], dofs[Field.MU]
    iq = dofs.interface_quadrature()
    sign = 1.0 if velocity is Field.U_F else -1.0
    nodes_u, phi = interface_basis(u, iq)
    nodes_mu, psi = interface_basis(mu, iq)
    ni, nl = nodes_u.shape
    local = sign * np.einsum("nq,nqj,nqa,nc->njca", iq.weights, psi, phi, iq.normals).reshape(ni, 2, 2 * nl)
    return _scatter(nodes_mu, _component_dofs(u, nodes_u), local, (mu.size, u.size))


def _interface_vector_block(dofs: DofMap, coefficient: np.ndarray) -> sp.csr_matrix:
    """sum_q w coefficient[d, c] phi_b phi_a for trial e_c phi_a and test e_d phi_b on Gamma_i."""
    space = dofs[Field.U_F]
    iq = dofs.interface_quadrature()
    nodes, phi = interface_basis(space, iq)
    ni, nl = nodes.shape
    local = np.einsum("nq,nqdc,nqb,nqa->ndbca", iq.weights, coefficient, phi, phi).reshape(ni, 2 * nl, 2 * nl)
    idx = _component_dofs(space, nodes)
    return _scatter(idx, idx, local, (space.size, space.size))


def tangential_matrix(dofs: DofMap, beta: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """<beta (u . tau), (v . tau)> on Gamma_i, beta at the interface quadrature points."""
    iq = dofs.interface_quadrature()
    tau = iq.tangents
    beta = np.ones(iq.weights.shape) if beta is None else beta
    coefficient = beta[:, :, None, None] * np.einsum("nd,nc->ndc", tau, tau)[:, None, :, :]
    return _interface_vector_block(dofs, coefficient)


def bjsj_coefficient(dofs: DofMap, material: "MaterialModel", theta: np.ndarray) -> np.ndarray:
    """alpha nu(theta) / sqrt(trace K) at the interface quadrature points, trace K = 2 kappa."""
    iq = dofs.interface_quadrature()
    theta_i = interface_values(dofs[Field.THETA], theta, iq, Region.MATRIX)
    kappa = material.kappa(iq.points[..., 0], iq.points[..., 1])
    return material.alpha * material.nu(theta_i) / np.sqrt(2.0 * kappa)


def bjsj_matrix(dofs: DofMap, material: "MaterialModel", theta: np.ndarray) -> sp.csr_matrix:
    return tangential_matrix(dofs, bjsj_coefficient(dofs, material, theta))


def convection_matrix(dofs: DofMap, a: np.ndarray, law: Optional[InterfaceLaw] = None) -> sp.csr_matrix:
    """Matrix of c(a; v, w), rows on the test field w.

    c(a; v, w) = 1/2 (a.grad v, w) - 1/2 (a.grad w, v) + 1/2 <(v.w)(a.n)>.
    With the Lions law the form
    L(a; v, w) = 1/2 <(a.w)(v.n) - (a.v)(w.n) - (v.w)(a.n)>
    is added; c + L is antisymmetric and at a = v gives the dynamic pressure -1/2 <|v|^2 (w.n)>.
    """
    space = dofs[Field.U_F]
    if a.shape != (space.size,):
        raise ParameterError(f"advecting field has shape {a.shape}, expected ({space.size},)")
    cq = dofs.quadrature(Region.FREE)
    cells = space.cells_of(cq.triangles)
    A = field_values(space, a, cq)
    G = cq.gradients(space.kind)
    phi = _per_cell(cq.values(space.kind), cq.n_cells)
    advective = np.einsum("nqi,nqai->nqa", A, G)
    T = np.einsum("nq,nqa,nqb->nba", cq.weights, advective, phi)
    local = _block_diagonal(0.5 * (T - T.transpose(0, 2, 1)), 2)
    idx = space.cell_dofs[cells]
    volume = _scatter(idx, idx, local, (space.size, space.size))

    iq = dofs.interface_quadrature()
    A_i = interface_values(space, a, iq)
    n = np.broadcast_to(iq.normals[:, None, :], A_i.shape)
    a_n = (A_i * n).sum(axis=-1)
    eye = np.eye(2)
    coefficient = 0.5 * a_n[..., None, None] * eye
    if law is InterfaceLaw.LIONS:
        coefficient = coefficient + 0.5 * (np.einsum("nqd,nqc->nqdc", A_i, n) - np.einsum("nqc,nqd->nqdc", A_i, n)
                                           - a_n[..., None, None] * eye)
    return volume + _interface_vector_block(dofs, coefficient)


def convection_form(dofs: DofMap, a: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
    return float(w @ (convection_matrix(dofs, a) @ v))


def advection_matrix(dofs: DofMap, u_f: np.ndarray, u_m: np.ndarray) -> sp.csr_matrix:
    """1/2 (u.grad theta, phi) - 1/2 (u.grad phi, theta) over both subdomains."""
    space = dofs[Field.THETA]
    total = sp.csr_matrix((space.size, space.size))
    for region, vf, u in ((Region.FREE, Field.U_F, u_f), (Region.MATRIX, Field.U_M, u_m)):
        cq = dofs.quadrature(region)
        U = field_values(dofs[vf], u, cq)
        G = cq.gradients(space.kind)
        phi = _per_cell(cq.values(space.kind), cq.n_cells)
        T = np.einsum("nq,nqa,nqb->nba", cq.weights, np.einsum("nqi,nqai->nqa", U, G), phi)
        idx = space.cell_dofs[space.cells_of(cq.triangles)]
        total = total + _scatter(idx, idx, 0.5 * (T - T.transpose(0, 2, 1)), (space.size, space.size))
    return total


def vector_load(dofs: DofMap, f: Field, values: np.ndarray) -> np.ndarray:
    """(g, v) for g given at the region's quadrature points, shape (nc, nq, 2)."""
    space = dofs[f]
    cq = dofs.quadrature(space.region)
    phi = _per_cell(cq.values(space.kind), cq.n_cells)
    local = np.concatenate([np.einsum("nq,nqb->nb", cq.weights * values[..., c], phi) for c in range(2)], axis=1)
    return _load(space.cell_dofs[space.cells_of(cq.triangles)], local, space.size)


def scalar_load(dofs: DofMap, f: Field, values: np.ndarray, region: Optional[Region] = None) -> np.ndarray:
    space = dofs[f]
    cq = dofs.quadrature(_region_of(space, region))
    phi = _per_cell(cq.values(space.kind), cq.n_cells)
    local = np.einsum("nq,nqb->nb", cq.weights * values, phi)
    return _load(space.cell_dofs[space.cells_of(cq.triangles)], local, space.size)


def buoyancy_load(dofs: DofMap, f: Field, theta: np.ndarray) -> np.ndarray:
    """(theta k, v) on the region of velocity field f."""
    cq = dofs.quadrature(dofs[f].region)
    theta_q = field_values(dofs[Field.THETA], theta, cq)
    return vector_load(dofs, f, theta_q[..., None] * dofs.mesh.geometry.k)


def _source_values(source: Callable, points: np.ndarray, t: float, components: int) -> np.ndarray:
    x, y = points[..., 0], points[..., 1]
    raw = source(x, y, t)
    if components == 1:
        return np.broadcast_to(np.asarray(raw, dtype=float), x.shape)
    return np.stack([np.broadcast_to(np.asarray(r, dtype=float), x.shape) for r in raw], axis=-1)


def _prescribed(dofs: DofMap, fields: Sequence[Field], params: "SchemeParams", t: float) -> Dict[Field, np.ndarray]:
    exact = params.sources.dirichlet if params.sources is not None else {}
    out = {}
    for f in fields:
        if f in exact:
            fn = exact[f]
            out[f] = interpolate(dofs, f, lambda x, y, fn=fn: fn(x, y, t))
        else:
            out[f] = dofs.zeros(f)
    return out


def _build_system(dofs: DofMap, fields: Sequence[Field], blocks, rhs, prescribed) -> SparseSystem:
    full = dofs.layout(fields, free=False)
    grid = [[blocks.get((r, c)) for c in fields] for r in fields]
    for i, f in enumerate(fields):
        if grid[i][i] is None:
            grid[i][i] = sp.csr_matrix((dofs[f].size, dofs[f].size))
    A = sp.bmat(grid, format="csr")
    b = np.concatenate([rhs[f] for f in fields])
    g = np.concatenate([prescribed[f] for f in fields])
    constrained = np.concatenate([dofs[f].constrained + full[f].start for f in fields]).astype(np.int64)
    mask = np.zeros(A.shape[0])
    mask[constrained] = 1.0
    A = (sp.diags(1.0 - mask) @ A + sp.diags(mask)).tocsr()
    A.eliminate_zeros()
    b = np.where(mask > 0.0, g, b)
    prescribed_full = np.where(mask > 0.0, g, 0.0)
    return SparseSystem(matrix=A, rhs=b, fields=tuple(fields), blocks=full, full_blocks=full,
                        free_index=np.flatnonzero(mask == 0.0), constrained_index=constrained,
                        prescribed=prescribed_full)


def apply_boundary_conditions(system: SparseSystem, dofs: DofMap) -> SparseSystem:
    """Eliminate constrained rows and columns, moving their values to the right-hand side."""
    if system.reduced:
        return system
    f_idx, c_idx = system.free_index, system.constrained_index
    A = system.matrix
    rows = A[f_idx]
    rhs = system.rhs[f_idx] - rows[:, c_idx] @ system.prescribed[c_idx]
    matrix = rows[:, f_idx].tocsr()
    matrix.eliminate_zeros()
    matrix.sort_indices()
    return replace(system, matrix=matrix, rhs=rhs, blocks=dofs.layout(system.fields, free=True), reduced=True)


def _check_size(dofs: DofMap, f: Field, array: np.ndarray, label: str):
    if np.shape(array) != (dofs[f].size,):
        raise ParameterError(f"{label} has shape {np.shape(array)}, expected ({dofs[f].size},)")


class MomentumOperator:
    """Momentum/mass system of one step; only convection and buoyancy change between Picard iterates."""

    def __init__(self, dofs: DofMap, material: "MaterialModel", params: "SchemeParams", state_k: State):
        state_k.check(dofs)
        self.dofs, self.material, self.params = dofs, material, params
        self.t_next = state_k.t + params.dt
        dt, varpi = params.dt, params.varpi
        theta_space = dofs[Field.THETA]
        cq_f, cq_m = dofs.quadrature(Region.FREE), dofs.quadrature(Region.MATRIX)
        nu_f = material.nu(field_values(theta_space, state_k.theta, cq_f))
        nu_m = material.nu(field_values(theta_space, state_k.theta, cq_m))
        kappa_m = material.kappa(cq_m.points[..., 0], cq_m.points[..., 1])

        mass_f = scalar_mass(dofs, Field.U_F)
        mass_m = scalar_mass(dofs, Field.U_M)
        a_ff = mass_f / dt + viscous_matrix(dofs, nu_f) + bjsj_matrix(dofs, material, state_k.theta)
        a_mm = scalar_mass(dofs, Field.U_M, weight=nu_m / kappa_m)
        if varpi > 0.0:
            a_mm = a_mm + mass_m * (varpi / dt)
        if params.xi > 0.0:
            a_mm = a_mm + params.xi * scalar_stiffness(dofs, Field.U_M)
        b_f = divergence_matrix(dofs, Field.U_F, Field.P_F)
        b_m = divergence_matrix(dofs, Field.U_M, Field.P_M)
        c_f = interface_coupling(dofs, Field.U_F)
        c_m = interface_coupling(dofs, Field.U_M)
        self._blocks = {
            (Field.U_F, Field.U_F): a_ff, (Field.U_F, Field.P_F): b_f.T.tocsr(), (Field.P_F, Field.U_F): b_f,
            (Field.U_F, Field.MU): c_f.T.tocsr(), (Field.MU, Field.U_F): c_f,
            (Field.U_M, Field.U_M): a_mm, (Field.U_M, Field.P_M): b_m.T.tocsr(), (Field.P_M, Field.U_M): b_m,
            (Field.U_M, Field.MU): c_m.T.tocsr(), (Field.MU, Field.U_M): c_m,
        }

        rhs_f = mass_f @ state_k.u_f / dt
        rhs_m = mass_m @ state_k.u_m * (varpi / dt)
        sources = params.sources
        if sources is not None and sources.f_f is not None:
            rhs_f = rhs_f + vector_load(dofs, Field.U_F, _source_values(sources.f_f, cq_f.points, self.t_next, 2))
        if sources is not None and sources.f_m is not None:
            rhs_m = rhs_m + vector_load(dofs, Field.U_M, _source_values(sources.f_m, cq_m.points, self.t_next, 2))
        self._rhs = {Field.U_F: rhs_f, Field.P_F: dofs.zeros(Field.P_F), Field.U_M: rhs_m,
                     Field.P_M: dofs.zeros(Field.P_M), Field.MU: dofs.zeros(Field.MU)}
        self._prescribed = _prescribed(dofs, MOMENTUM_FIELDS, params, self.t_next)

    def system(self, theta_guess: np.ndarray, u_lag: np.ndarray) -> SparseSystem:
        _check_size(self.dofs, Field.THETA, theta_guess, "theta_guess")
        _check_size(self.dofs, Field.U_F, u_lag, "u_lag")
        blocks = dict(self._blocks)
        blocks[(Field.U_F, Field.U_F)] = blocks[(Field.U_F, Field.U_F)] + \
            convection_matrix(self.dofs, u_lag, self.params.interface_law)
        rhs = dict(self._rhs)
        if self.params.buoyancy:
            rhs[Field.U_F] = rhs[Field.U_F] + buoyancy_load(self.dofs, Field.U_F, theta_guess)
            rhs[Field.U_M] = rhs[Field.U_M] + buoyancy_load(self.dofs, Field.U_M, theta_guess)
        return _build_system(self.dofs, MOMENTUM_FIELDS, blocks, rhs, self._prescribed)


class TemperatureOperator:
    """Temperature system of one step; only the advecting velocity changes between Picard iterates."""

    def __init__(self, dofs: DofMap, material: "MaterialModel", params: "SchemeParams", state_k: State):
        state_k.check(dofs)
        self.dofs, self.params = dofs, params
        self.t_next = state_k.t + params.dt
        theta_space = dofs[Field.THETA]
        mass = scalar_mass(dofs, Field.THETA)
        diffusion = sp.csr_matrix((theta_space.size, theta_space.size))
        for region in (Region.FREE, Region.MATRIX):
            cq = dofs.quadrature(region)
            lam = material.lam(region)(field_values(theta_space, state_k.theta, cq))
            diffusion = diffusion + scalar_stiffness(dofs, Field.THETA, weight=lam, region=region)
        self._matrix = mass / params.dt + diffusion
        self._rhs = mass @ state_k.theta / params.dt
        sources = params.sources
        if sources is not None and sources.g is not None:
            cq = dofs.quadrature(None)
            self._rhs = self._rhs + scalar_load(dofs, Field.THETA, _source_values(sources.g, cq.points, self.t_next, 1))
        self._prescribed = _prescribed(dofs, TEMPERATURE_FIELDS, params, self.t_next)

    def system(self, u_f: np.ndarray, u_m: np.ndarray) -> SparseSystem:
        _check_size(self.dofs, Field.U_F, u_f, "u_f")
        _check_size(self.dofs, Field.U_M, u_m, "u_m")
        matrix = self._matrix + advection_matrix(self.dofs, u_f, u_m)
        return _build_system(self.dofs, TEMPERATURE_FIELDS, {(Field.THETA, Field.THETA): matrix},
                             {Field.THETA: self._rhs}, self._prescribed)


def assemble_momentum(state_k: State, theta_guess: np.ndarray, u_lag: np.ndarray, params: "SchemeParams",
                      material: "MaterialModel", dofs: DofMap) -> SparseSystem:
    return MomentumOperator(dofs, material, params, state_k).system(theta_guess, u_lag)


def assemble_temperature(state_k: State, u_new: Tuple[np.ndarray, np.ndarray], params: "SchemeParams",
                         material: "MaterialModel", dofs: DofMap) -> SparseSystem:
    u_f, u_m = u_new
    return TemperatureOperator(dofs, material, params, state_k).system(u_f, u_m)


def assemble_projection(dofs: DofMap, u_f: np.ndarray, u_m: np.ndarray,
                        params: Optional["SchemeParams"] = None, t: float = 0.0) -> SparseSystem:
    """L2 projection of (u_f, u_m) onto discretely divergence-free velocities with matching normal traces."""
    _check_size(dofs, Field.U_F, u_f, "u_f")
    _check_size(dofs, Field.U_M, u_m, "u_m")
    mass_f = scalar_mass(dofs, Field.U_F)
    mass_m = scalar_mass(dofs, Field.U_M)
    b_f = divergence_matrix(dofs, Field.U_F, Field.P_F)
    b_m = divergence_matrix(dofs, Field.U_M, Field.P_M)
    c_f = interface_coupling(dofs, Field.U_F)
    c_m = interface_coupling(dofs, Field.U_M)
    blocks = {
        (Field.U_F, Field.U_F): mass_f, (Field.U_F, Field.P_F): b_f.T.tocsr(), (Field.P_F, Field.U_F): b_f,
        (Field.U_F, Field.MU): c_f.T.tocsr(), (Field.MU, Field.U_F): c_f,
        (Field.U_M, Field.U_M): mass_m, (Field.U_M, Field.P_M): b_m.T.tocsr(), (Field.P_M, Field.U_M): b_m,
        (Field.U_M, Field.MU): c_m.T.tocsr(), (Field.MU, Field.U_M): c_m,
    }
    rhs = {Field.U_F: mass_f @ u_f, Field.P_F: dofs.zeros(Field.P_F), Field.U_M: mass_m @ u_m,
           Field.P_M: dofs.zeros(Field.P_M), Field.MU: dofs.zeros(Field.MU)}
    prescribed = {f: dofs.zeros(f) for f in MOMENTUM_FIELDS}
    if params is not None:
        prescribed.update(_prescribed(dofs, (Field.U_F, Field.U_M), params, t))
    return _build_system(dofs, MOMENTUM_FIELDS, blocks, rhs, prescribed)


def weak_residual(state_k: State, state_k1: State, params: "SchemeParams", material: "MaterialModel",
                  dofs: DofMap) -> Tuple[float, float]:
    """Residual norms of the step equations at state_k1, convection evaluated at u^{k+1} itself."""
    momentum = apply_boundary_conditions(
        assemble_momentum(state_k, state_k1.theta, state_k1.u_f, params, material, dofs), dofs)
    temperature = apply_boundary_conditions(
        assemble_temperature(state_k, (state_k1.u_f, state_k1.u_m), params, material, dofs), dofs)
    r_momentum = momentum.matrix @ momentum.pack(state_k1) - momentum.rhs
    r_temperature = temperature.matrix @ temperature.pack(state_k1) - temperature.rhs
    return float(np.linalg.norm(r_momentum)), float(np.linalg.norm(r_temperature))


def interface_flux_defect(dofs: DofMap, state: State) -> float:
    """max_j |<(u_f - u_m) . n, psi_j>| over the multiplier basis."""
    jump = interface_coupling(dofs, Field.U_F) @ state.u_f + interface_coupling(dofs, Field.U_M) @ state.u_m
    return float(np.abs(jump).max(initial=0.0))


def divergence_defect(dofs: DofMap, state: State) -> Dict[Field, float]:
    """|B u| per velocity, over pressure rows that are not pinned; a pinned row is replaced in the solve."""
    out = {}
    for velocity, pressure in ((Field.U_F, Field.P_F), (Field.U_M, Field.P_M)):
        rows = divergence_matrix(dofs, velocity, pressure) @ state[velocity]
        out[velocity] = float(np.linalg.norm(rows[dofs[pressure].free]))
    return out
