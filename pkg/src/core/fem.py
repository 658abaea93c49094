"""Lagrange elements, quadrature, degree-of-freedom maps and norms.

Reference triangle (0,0), (1,0), (0,1) with barycentrics l0 = 1-x-y, l1 = x,
l2 = y. P2 midpoint nodes 3, 4, 5 sit on the edges (0,1), (1,2), (2,0).
Vector fields are stored component-major: dof = component * n_nodes + node.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .enums import BoundaryTag, ClampMode, ElementKind, Field, FIELD_ORDER, NormKind, Region
from .errors import ParameterError
from .mesh import DecomposedMesh, REGION_CODES

logger = logging.getLogger(__name__)

MAX_QUADRATURE_DEGREE = 6
NORM_QUADRATURE_DEGREE = 6
REFERENCE_TOLERANCE = 1e-12

LOCAL_DOF_COUNT = {ElementKind.P1: 3, ElementKind.P2: 6, ElementKind.P2_VECTOR: 12}

# (scalar kind, components, region); region None is the whole domain, MU lives on Gamma_i
FIELD_LAYOUT = {
    Field.U_F: (ElementKind.P2, 2, Region.FREE),
    Field.P_F: (ElementKind.P1, 1, Region.FREE),
    Field.U_M: (ElementKind.P2, 2, Region.MATRIX),
    Field.P_M: (ElementKind.P1, 1, Region.MATRIX),
    Field.THETA: (ElementKind.P2, 1, None),
    Field.MU: (ElementKind.P1, 1, None),
}

Expression = Callable[[np.ndarray, np.ndarray], Union[np.ndarray, float, Sequence]]


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int
    domain: str


@lru_cache(maxsize=None)
def quadrature_rule(degree: int, domain: str = "triangle") -> QuadratureRule:
    """Gauss rules: Legendre on [0, 1], collapsed Legendre on the reference triangle."""
    if isinstance(degree, bool) or int(degree) != degree or not 1 <= degree <= MAX_QUADRATURE_DEGREE:
        raise ParameterError(f"unsupported quadrature degree {degree!r} (1..{MAX_QUADRATURE_DEGREE})")
    degree = int(degree)
    if domain == "segment":
        x, w = np.polynomial.legendre.leggauss(degree // 2 + 1)
        points, weights = 0.5 * (x + 1.0), 0.5 * w
    elif domain == "triangle":
        # the collapse (s, t) -> (s, (1-s) t) adds one degree in s
        x, w = np.polynomial.legendre.leggauss((degree + 3) // 2)
        s, ws = 0.5 * (x + 1.0), 0.5 * w
        S, T = np.meshgrid(s, s, indexing="ij")
        WS, WT = np.meshgrid(ws, ws, indexing="ij")
        points = np.column_stack([S.ravel(), ((1.0 - S) * T).ravel()])
        weights = (WS * WT * (1.0 - S)).ravel()
    else:
        raise ParameterError(f"unknown quadrature domain {domain!r}")
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points=points, weights=weights, degree=degree, domain=domain)


def _scalar_kind(kind: ElementKind) -> ElementKind:
    return ElementKind.P2 if kind is ElementKind.P2_VECTOR else kind


def tabulate(kind: ElementKind, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Scalar basis values (..., n) and reference gradients (..., n, 2) at reference points."""
    points = np.asarray(points, dtype=float)
    x, y = points[..., 0], points[..., 1]
    lam = np.stack([1.0 - x - y, x, y], axis=-1)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if kind is ElementKind.P1:
        grads = np.broadcast_to(dlam, points.shape[:-1] + (3, 2)).copy()
        return lam, grads
    if kind is not ElementKind.P2:
        raise ParameterError(f"tabulate expects a scalar kind, got {kind}")
    values = np.empty(points.shape[:-1] + (6,))
    grads = np.empty(points.shape[:-1] + (6, 2))
    for i in range(3):
        values[..., i] = lam[..., i] * (2.0 * lam[..., i] - 1.0)
        grads[..., i, :] = (4.0 * lam[..., i])[..., None] - 1.0
        grads[..., i, :] *= dlam[i]
    for k, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
        values[..., 3 + k] = 4.0 * lam[..., i] * lam[..., j]
        grads[..., 3 + k, :] = 4.0 * (lam[..., j][..., None] * dlam[i] + lam[..., i][..., None] * dlam[j])
    return values, grads


def shape_functions(kind: ElementKind, point) -> Tuple[np.ndarray, np.ndarray]:
    """Basis values and reference gradients at one point.

    The point is given in reference coordinates (x, y) or as barycentrics
    (l0, l1, l2). P2-vector values have shape (12, 2) and gradients (12, 2, 2).
    """
    p = np.asarray(point, dtype=float).ravel()
    if p.size == 3:
        if abs(p.sum() - 1.0) > REFERENCE_TOLERANCE:
            raise ParameterError(f"barycentric coordinates {tuple(p)} do not sum to 1")
        p = p[1:]
    if p.size != 2 or not np.all(np.isfinite(p)):
        raise ParameterError(f"invalid reference point {point!r}")
    if p[0] < -REFERENCE_TOLERANCE or p[1] < -REFERENCE_TOLERANCE or p.sum() > 1.0 + REFERENCE_TOLERANCE:
        raise ParameterError(f"point {tuple(p)} lies outside the reference triangle")
    values, grads = tabulate(_scalar_kind(kind), p)
    if kind is not ElementKind.P2_VECTOR:
        return values, grads
    vector_values = np.zeros((12, 2))
    vector_grads = np.zeros((12, 2, 2))
    for c in range(2):
        vector_values[6 * c:6 * c + 6, c] = values
        vector_grads[6 * c:6 * c + 6, c, :] = grads
    return vector_values, vector_grads


@dataclass(frozen=True, eq=False)
class FieldSpace:
    field: Field
    kind: ElementKind
    components: int
    region: Optional[Region]
    triangles: np.ndarray         # cells -> mesh triangles; empty for the interface field
    cell_of_triangle: np.ndarray  # mesh triangle -> cell, -1 outside the region
    cell_nodes: np.ndarray        # (n_cells, n_local); for MU one row per interface edge
    node_coords: np.ndarray
    constrained: np.ndarray       # sorted dof ids

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def size(self) -> int:
        return self.components * self.n_nodes

    @property
    def element_kind(self) -> ElementKind:
        return ElementKind.P2_VECTOR if self.components == 2 else self.kind

    @cached_property
    def free(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.size), self.constrained)

    @property
    def n_free(self) -> int:
        return self.size - len(self.constrained)

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        return np.concatenate([self.cell_nodes + c * self.n_nodes for c in range(self.components)], axis=1)

    def cells_of(self, triangles: np.ndarray) -> np.ndarray:
        cells = self.cell_of_triangle[triangles]
        if np.any(cells < 0):
            raise ParameterError(f"{self.field.value} is not defined on some requested triangles")
        return cells


@dataclass(frozen=True, eq=False)
class CellQuadrature:
    triangles: np.ndarray
    reference_points: np.ndarray  # (nq, 2)
    points: np.ndarray            # (nc, nq, 2)
    weights: np.ndarray           # (nc, nq), physical
    inverse_jacobians: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.triangles)

    def values(self, kind: ElementKind) -> np.ndarray:
        return tabulate(kind, self.reference_points)[0]

    def gradients(self, kind: ElementKind) -> np.ndarray:
        ref = tabulate(kind, self.reference_points)[1]
        return np.einsum("qaj,cji->cqai", ref, self.inverse_jacobians)


@dataclass(frozen=True, eq=False)
class InterfaceQuadrature:
    edges: np.ndarray             # global edge ids along Gamma_i
    endpoints: np.ndarray         # (ni, 2) vertex ids, point = V[a] + s (V[b] - V[a])
    free_triangles: np.ndarray
    matrix_triangles: np.ndarray
    normals: np.ndarray           # (ni, 2), free -> matrix
    tangents: np.ndarray
    s: np.ndarray                 # (nq,)
    points: np.ndarray            # (ni, nq, 2)
    weights: np.ndarray           # (ni, nq), physical
    ref_free: np.ndarray          # (ni, nq, 2)
    ref_matrix: np.ndarray

    @property
    def length(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class DofMap:
    mesh: DecomposedMesh
    spaces: Dict[Field, FieldSpace]
    constraints: Dict[str, Tuple[Tuple[Field, np.ndarray], ...]]
    clamp: ClampMode = ClampMode.NONE
    _cache: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, f: Field) -> FieldSpace:
        return self.spaces[f]

    def layout(self, fields: Sequence[Field] = FIELD_ORDER, free: bool = True) -> Dict[Field, slice]:
        blocks, offset = {}, 0
        for f in fields:
            n = self.spaces[f].n_free if free else self.spaces[f].size
            blocks[f] = slice(offset, offset + n)
            offset += n
        return blocks

    @cached_property
    def offsets(self) -> Dict[Field, int]:
        return {f: s.start for f, s in self.layout().items()}

    @property
    def total_free(self) -> int:
        return sum(s.n_free for s in self.spaces.values())

    def constrained_count(self, fields: Sequence[Field] = FIELD_ORDER) -> int:
        return sum(len(self.spaces[f].constrained) for f in fields)

    def zeros(self, f: Field) -> np.ndarray:
        return np.zeros(self.spaces[f].size)

    @cached_property
    def cell_geometry(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Per-triangle origin, jacobian, inverse jacobian and determinant."""
        V, T = self.mesh.vertices, self.mesh.triangles
        origin = V[T[:, 0]]
        J = np.stack([V[T[:, 1]] - origin, V[T[:, 2]] - origin], axis=2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / det
        inv[:, 0, 1] = -J[:, 0, 1] / det
        inv[:, 1, 0] = -J[:, 1, 0] / det
        inv[:, 1, 1] = J[:, 0, 0] / det
        return origin, J, inv, det

    def to_reference(self, triangles: np.ndarray, points: np.ndarray) -> np.ndarray:
        origin, _, inv, _ = self.cell_geometry
        if points.ndim == 3:
            return np.einsum("nij,nqj->nqi", inv[triangles], points - origin[triangles][:, None, :])
        return np.einsum("nij,nj->ni", inv[triangles], points - origin[triangles])

    def quadrature(self, region: Optional[Region] = None, degree: int = NORM_QUADRATURE_DEGREE) -> CellQuadrature:
        key = ("cells", region, degree)
        if key not in self._cache:
            triangles = (np.arange(self.mesh.n_triangles) if region is None
                         else self.mesh.triangles_in(region))
            rule = quadrature_rule(degree)
            origin, J, inv, det = self.cell_geometry
            points = origin[triangles][:, None, :] + np.einsum("nij,qj->nqi", J[triangles], rule.points)
            weights = np.abs(det[triangles])[:, None] * rule.weights[None, :]
            self._cache[key] = CellQuadrature(triangles=triangles, reference_points=rule.points,
                                              points=points, weights=weights,
                                              inverse_jacobians=inv[triangles])
        return self._cache[key]

    def interface_quadrature(self, degree: int = NORM_QUADRATURE_DEGREE) -> InterfaceQuadrature:
        key = ("interface", degree)
        if key not in self._cache:
            mesh = self.mesh
            rule = quadrature_rule(degree, "segment")
            endpoints = mesh.edges[mesh.interface_edge_ids]
            a, b = mesh.vertices[endpoints[:, 0]], mesh.vertices[endpoints[:, 1]]
            points = a[:, None, :] + rule.points[None, :, None] * (b - a)[:, None, :]
            lengths = np.hypot(*(b - a).T)
            self._cache[key] = InterfaceQuadrature(
                edges=mesh.interface_edge_ids, endpoints=endpoints,
                free_triangles=mesh.interface_free_triangles,
                matrix_triangles=mesh.interface_matrix_triangles,
                normals=mesh.interface_normals, tangents=mesh.interface_tangents,
                s=rule.points, points=points, weights=lengths[:, None] * rule.weights[None, :],
                ref_free=self.to_reference(mesh.interface_free_triangles, points),
                ref_matrix=self.to_reference(mesh.interface_matrix_triangles, points),
            )
        return self._cache[key]


def _lagrange_nodes(mesh: DecomposedMesh, triangles: np.ndarray, kind: ElementKind):
    """Nodes of a region: vertices by id, then edge midpoints by edge id."""
    vertex_ids = np.unique(mesh.triangles[triangles])
    vertex_node = np.full(mesh.n_vertices, -1, dtype=np.int64)
    vertex_node[vertex_ids] = np.arange(len(vertex_ids))
    coords = [mesh.vertices[vertex_ids]]
    cell_nodes = vertex_node[mesh.triangles[triangles]]
    edge_node = np.full(mesh.n_edges, -1, dtype=np.int64)
    if kind is ElementKind.P2:
        edge_ids = np.unique(mesh.triangle_edges[triangles])
        edge_node[edge_ids] = len(vertex_ids) + np.arange(len(edge_ids))
        coords.append(mesh.vertices[mesh.edges[edge_ids]].mean(axis=1))
        cell_nodes = np.concatenate([cell_nodes, edge_node[mesh.triangle_edges[triangles]]], axis=1)
    return cell_nodes, np.concatenate(coords), vertex_node, edge_node


def _boundary_nodes(mesh: DecomposedMesh, vertex_node, edge_node, tags) -> Dict[int, list]:
    """Node ids on boundary edges with the given tags, keyed by the normal axis of each edge."""
    by_axis: Dict[int, list] = {0: [], 1: []}
    for row, tag in enumerate(mesh.boundary_tags):
        if tag not in tags:
            continue
        a, b = mesh.boundary_edges[row]
        d = mesh.vertices[b] - mesh.vertices[a]
        axis = 0 if abs(d[0]) <= abs(d[1]) else 1
        nodes = [vertex_node[a], vertex_node[b], edge_node[mesh.boundary_edge_ids[row]]]
        by_axis[axis].extend(int(n) for n in nodes if n >= 0)
    return by_axis


def build_dof_map(mesh: DecomposedMesh, clamp: ClampMode = ClampMode.NONE) -> DofMap:
    """Number every field's nodes and collect the eliminated dofs.

    With a clamp mode the interface conditions are replaced by Dirichlet data
    on Gamma_i so that one subdomain can be verified in isolation.
    """
    spaces: Dict[Field, FieldSpace] = {}
    claims: Dict[Field, Dict[int, str]] = {f: {} for f in FIELD_ORDER}
    all_tags = (BoundaryTag.GAMMA_F, BoundaryTag.GAMMA_M)

    def claim(f: Field, dofs, name: str):
        for d in dofs:
            claims[f].setdefault(int(d), name)

    for f in FIELD_ORDER:
        kind, components, region = FIELD_LAYOUT[f]
        if f is Field.MU:
            continue
        triangles = (np.arange(mesh.n_triangles) if region is None else mesh.triangles_in(region))
        cell_nodes, coords, vertex_node, edge_node = _lagrange_nodes(mesh, triangles, kind)
        n_nodes = len(coords)

        def vector(nodes, comps=(0, 1)):
            return [c * n_nodes + n for n in nodes for c in comps]

        outer = _boundary_nodes(mesh, vertex_node, edge_node, all_tags)
        interface = _boundary_nodes(mesh, vertex_node, edge_node, (BoundaryTag.GAMMA_I,))
        interface_nodes = interface[0] + interface[1]
        if f is Field.U_F:
            on_gamma_f = _boundary_nodes(mesh, vertex_node, edge_node, (BoundaryTag.GAMMA_F,))
            claim(f, vector(on_gamma_f[0] + on_gamma_f[1]), "u_f:Gamma_f")
            if clamp is not ClampMode.NONE:
                claim(f, vector(interface_nodes), "u_f:Gamma_i")
        elif f is Field.U_M:
            on_gamma_m = _boundary_nodes(mesh, vertex_node, edge_node, (BoundaryTag.GAMMA_M,))
            if clamp is ClampMode.MATRIX:
                claim(f, vector(on_gamma_m[0] + on_gamma_m[1]), "u_m:Gamma_m")
            claim(f, [0 * n_nodes + n for n in on_gamma_m[0]] + [1 * n_nodes + n for n in on_gamma_m[1]],
                  "u_m:normal_Gamma_m")
            if clamp is not ClampMode.NONE:
                claim(f, vector(interface_nodes), "u_m:Gamma_i")
        elif f is Field.THETA:
            claim(f, outer[0] + outer[1], "theta:boundary")
            if clamp is not ClampMode.NONE:
                claim(f, interface_nodes, "theta:Gamma_i")
        elif f is Field.P_M:
            claim(f, [0], "P_m:pin")
        elif f is Field.P_F and clamp is not ClampMode.NONE:
            claim(f, [0], "P_f:pin")

        cell_of_triangle = np.full(mesh.n_triangles, -1, dtype=np.int64)
        cell_of_triangle[triangles] = np.arange(len(triangles))
        spaces[f] = FieldSpace(field=f, kind=kind, components=components, region=region,
                               triangles=triangles, cell_of_triangle=cell_of_triangle,
                               cell_nodes=cell_nodes, node_coords=coords,
                               constrained=np.array(sorted(claims[f]), dtype=np.int64))

    endpoints = mesh.edges[mesh.interface_edge_ids]
    mu_vertices = np.unique(endpoints)
    mu_node = np.full(mesh.n_vertices, -1, dtype=np.int64)
    mu_node[mu_vertices] = np.arange(len(mu_vertices))
    if clamp is not ClampMode.NONE:
        claim(Field.MU, range(len(mu_vertices)), "mu:all")
    spaces[Field.MU] = FieldSpace(field=Field.MU, kind=ElementKind.P1, components=1, region=None,
                                  triangles=np.zeros(0, dtype=np.int64),
                                  cell_of_triangle=np.full(mesh.n_triangles, -1, dtype=np.int64),
                                  cell_nodes=mu_node[endpoints], node_coords=mesh.vertices[mu_vertices],
                                  constrained=np.array(sorted(claims[Field.MU]), dtype=np.int64))

    constraints: Dict[str, list] = {}
    for f, owned in claims.items():
        for dof, name in sorted(owned.items()):
            constraints.setdefault(name, {}).setdefault(f, []).append(dof)
    frozen = {name: tuple((f, np.array(ids, dtype=np.int64)) for f, ids in per_field.items())
              for name, per_field in constraints.items()}

    dofs = DofMap(mesh=mesh, spaces=spaces, constraints=frozen, clamp=clamp)
    logger.debug("dof map (%s clamp): %s free of %d", clamp.value,
                 ", ".join(f"{f.value}={spaces[f].n_free}" for f in FIELD_ORDER),
                 sum(s.size for s in spaces.values()))
    return dofs


def _check_coefficients(space: FieldSpace, coeffs) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.size,):
        raise ParameterError(f"{space.field.value}: expected {space.size} coefficients, got shape {coeffs.shape}")
    return coeffs


def field_values(space: FieldSpace, coeffs: np.ndarray, cq: CellQuadrature) -> np.ndarray:
    """Values at the quadrature points, (nc, nq) or (nc, nq, 2)."""
    nodes = space.cell_nodes[space.cells_of(cq.triangles)]
    local = coeffs.reshape(space.components, space.n_nodes)[:, nodes]
    values = np.einsum("kna,qa->nqk", local, cq.values(space.kind))
    return values[..., 0] if space.components == 1 else values


def field_gradients(space: FieldSpace, coeffs: np.ndarray, cq: CellQuadrature) -> np.ndarray:
    """Gradients at the quadrature points, (nc, nq, 2) or (nc, nq, component, 2)."""
    nodes = space.cell_nodes[space.cells_of(cq.triangles)]
    local = coeffs.reshape(space.components, space.n_nodes)[:, nodes]
    grads = np.einsum("kna,nqai->nqki", local, cq.gradients(space.kind))
    return grads[:, :, 0, :] if space.components == 1 else grads


def interface_basis(space: FieldSpace, iq: InterfaceQuadrature,
                    side: Optional[Region] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Scalar basis restricted to Gamma_i: node ids (ni, nloc) and values (ni, nq, nloc)."""
    if space.field is Field.MU:
        phi = np.stack([1.0 - iq.s, iq.s], axis=-1)
        return space.cell_nodes, np.broadcast_to(phi, (len(iq.edges),) + phi.shape)
    side = side or space.region or Region.FREE
    triangles, ref = ((iq.free_triangles, iq.ref_free) if side is Region.FREE
                      else (iq.matrix_triangles, iq.ref_matrix))
    nodes = space.cell_nodes[space.cells_of(triangles)]
    return nodes, tabulate(space.kind, ref)[0]


def interface_values(space: FieldSpace, coeffs: np.ndarray, iq: InterfaceQuadrature,
                     side: Optional[Region] = None) -> np.ndarray:
    nodes, phi = interface_basis(space, iq, side)
    local = coeffs.reshape(space.components, space.n_nodes)[:, nodes]
    values = np.einsum("kna,nqa->nqk", local, phi)
    return values[..., 0] if space.components == 1 else values


def _vectorize(values, shape, components: int) -> np.ndarray:
    if components == 1:
        out = np.broadcast_to(np.asarray(values, dtype=float), shape)
        return np.array(out, dtype=float).ravel()
    if len(values) != components:
        raise ParameterError(f"vector expression must return {components} components")
    return np.concatenate([np.broadcast_to(np.asarray(v, dtype=float), shape).ravel() for v in values])


def interpolate(dofs: DofMap, f: Field, expression: Expression) -> np.ndarray:
    """Nodal interpolant of expression(x, y); constrained entries are not touched."""
    space = dofs[f]
    x, y = space.node_coords[:, 0], space.node_coords[:, 1]
    coeffs = _vectorize(expression(x, y), x.shape, space.components)
    if not np.all(np.isfinite(coeffs)):
        raise ParameterError(f"{f.value}: expression is not finite at every node")
    return coeffs


def apply_constraints(dofs: DofMap, f: Field, coeffs: np.ndarray, values: Optional[np.ndarray] = None) -> np.ndarray:
    """Copy of coeffs with constrained entries set to values (zero by default)."""
    space = dofs[f]
    out = _check_coefficients(space, coeffs).copy()
    out[space.constrained] = 0.0 if values is None else np.asarray(values, dtype=float)[space.constrained]
    return out


def evaluate(dofs: DofMap, f: Field, coeffs: np.ndarray, point) -> Union[float, np.ndarray]:
    space = dofs[f]
    coeffs = _check_coefficients(space, coeffs)
    p = np.asarray(point, dtype=float)
    if f is Field.MU:
        V = dofs.mesh.vertices
        for k, (a, b) in enumerate(dofs.mesh.edges[dofs.mesh.interface_edge_ids]):
            d = V[b] - V[a]
            s = np.dot(p - V[a], d) / np.dot(d, d)
            off = np.abs((p - V[a])[0] * d[1] - (p - V[a])[1] * d[0]) / np.hypot(*d)
            if -REFERENCE_TOLERANCE <= s <= 1.0 + REFERENCE_TOLERANCE and off <= REFERENCE_TOLERANCE:
                n0, n1 = space.cell_nodes[k]
                return float((1.0 - s) * coeffs[n0] + s * coeffs[n1])
        raise ParameterError(f"point {tuple(p)} is not on the interface")
    ref = dofs.to_reference(space.triangles, np.broadcast_to(p, (len(space.triangles), 2)))
    inside = (ref[:, 0] >= -REFERENCE_TOLERANCE) & (ref[:, 1] >= -REFERENCE_TOLERANCE) \
        & (ref.sum(axis=1) <= 1.0 + REFERENCE_TOLERANCE)
    hits = np.flatnonzero(inside)
    if len(hits) == 0:
        raise ParameterError(f"point {tuple(p)} lies outside the region of {f.value}")
    cell = hits[0]
    phi = tabulate(space.kind, ref[cell])[0]
    local = coeffs.reshape(space.components, space.n_nodes)[:, space.cell_nodes[cell]]
    value = local @ phi
    return float(value[0]) if space.components == 1 else value


def _norm_region(space: FieldSpace, region: Optional[Region]) -> Optional[Region]:
    if region is None:
        return space.region
    if space.region is not None and region is not space.region:
        raise ParameterError(f"{space.field.value} is not defined on the {region.value} region")
    return region


def field_norm(dofs: DofMap, f: Field, coeffs: np.ndarray, norm: NormKind,
               region: Optional[Region] = None) -> float:
    """Quadrature evaluation of a norm; W16-semi is the L6 norm of the gradient."""
    space = dofs[f]
    coeffs = _check_coefficients(space, coeffs)
    if norm is NormKind.INTERFACE_L2:
        iq = dofs.interface_quadrature()
        values = interface_values(space, coeffs, iq, region)
        sq = values ** 2 if values.ndim == 2 else (values ** 2).sum(axis=-1)
        return float(np.sqrt((iq.weights * sq).sum()))
    if f is Field.MU:
        raise ParameterError(f"{norm.value} is a volume norm and mu lives on the interface")
    cq = dofs.quadrature(_norm_region(space, region))
    if norm in (NormKind.H1_SEMI, NormKind.W16_SEMI):
        grads = field_gradients(space, coeffs, cq)
        pointwise = np.sqrt((grads ** 2).reshape(grads.shape[0], grads.shape[1], -1).sum(axis=-1))
        p = 2.0 if norm is NormKind.H1_SEMI else 6.0
    else:
        values = field_values(space, coeffs, cq)
        pointwise = np.abs(values) if values.ndim == 2 else np.sqrt((values ** 2).sum(axis=-1))
        p = {NormKind.L2: 2.0, NormKind.L4: 4.0, NormKind.L6: 6.0}[norm]
    scale = pointwise.max(initial=0.0)
    if scale == 0.0:
        return 0.0
    return float(scale * ((cq.weights * (pointwise / scale) ** p).sum()) ** (1.0 / p))


def region_mean(dofs: DofMap, f: Field, coeffs: np.ndarray, region: Optional[Region] = None) -> float:
    space = dofs[f]
    cq = dofs.quadrature(_norm_region(space, region))
    values = field_values(space, _check_coefficients(space, coeffs), cq)
    return float((cq.weights * values).sum() / cq.weights.sum())


def l2_error(dofs: DofMap, f: Field, coeffs: np.ndarray, exact: Expression,
             subtract_mean: bool = False) -> float:
    """L2 distance to an exact expression; pressures compare after removing the region mean."""
    space = dofs[f]
    cq = dofs.quadrature(space.region)
    values = field_values(space, _check_coefficients(space, coeffs), cq)
    x, y = cq.points[..., 0], cq.points[..., 1]
    raw = exact(x, y)
    if space.components == 1:
        target = np.broadcast_to(np.asarray(raw, dtype=float), x.shape)
    else:
        target = np.stack([np.broadcast_to(np.asarray(v, dtype=float), x.shape) for v in raw], axis=-1)
    diff = values - target
    if subtract_mean:
        w = cq.weights if diff.ndim == 2 else cq.weights[..., None]
        diff = diff - (w * diff).sum(axis=(0, 1)) / cq.weights.sum()
    sq = diff ** 2 if diff.ndim == 2 else (diff ** 2).sum(axis=-1)
    return float(np.sqrt((cq.weights * sq).sum()))
