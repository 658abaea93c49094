"""Layered free-flow / porous-matrix triangulation.

The domain is the rectangle [0, Lx] x [0, Hm + Hf]: the porous matrix occupies
the strip below y = Hm, the free-flow layer sits on top of it. Gamma_f is the
top side plus the lateral sides of the free layer, Gamma_m the bottom side
plus the lateral sides of the matrix, Gamma_i the horizontal segment y = Hm.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .enums import BoundaryTag, Region
from .errors import ParameterError

logger = logging.getLogger(__name__)

MESH_HEADER = "nsdb-mesh v1"
REGION_CODES = {Region.FREE: 0, Region.MATRIX: 1}
REGION_FROM_CODE = {code: region for region, code in REGION_CODES.items()}

# local vertex pairs of the three triangle edges; P2 midpoint nodes follow this order
LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


@dataclass(frozen=True)
class GeometrySpec:
    width: float
    porous_height: float
    free_height: float
    gravity_direction: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        for name in ("width", "porous_height", "free_height"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ParameterError(f"{name} must be strictly positive, got {value}")
        k = np.asarray(self.gravity_direction, dtype=float)
        if k.shape != (2,) or abs(np.hypot(k[0], k[1]) - 1.0) > 1e-12:
            raise ParameterError(f"gravity_direction must be a unit vector, got {self.gravity_direction}")

    @property
    def total_height(self) -> float:
        return self.porous_height + self.free_height

    @property
    def area(self) -> float:
        return self.width * self.total_height

    @property
    def k(self) -> np.ndarray:
        return np.asarray(self.gravity_direction, dtype=float)


@dataclass(frozen=True)
class InterfaceFrame:
    edge_id: int
    normal: np.ndarray
    tangent: np.ndarray
    length: float


@dataclass(frozen=True)
class MeshViolation:
    kind: str
    entity: str
    message: str


@dataclass(frozen=True, eq=False)
class DecomposedMesh:
    geometry: GeometrySpec
    vertices: np.ndarray            # (nv, 2)
    triangles: np.ndarray           # (nt, 3), counter-clockwise
    regions: np.ndarray             # (nt,) REGION_CODES
    edges: np.ndarray               # (ne, 2), sorted vertex pairs
    triangle_edges: np.ndarray      # (nt, 3), edges of LOCAL_EDGES
    edge_triangles: np.ndarray      # (ne, 2), -1 where absent
    boundary_edges: np.ndarray      # (nb, 2) vertex ids, Gamma_i included
    boundary_tags: Tuple[BoundaryTag, ...]
    boundary_edge_ids: np.ndarray   # (nb,)
    interface_edge_ids: np.ndarray  # (ni,), ordered along Gamma_i
    interface_free_triangles: np.ndarray
    interface_matrix_triangles: np.ndarray
    interface_normals: np.ndarray   # (ni, 2), free -> matrix
    interface_tangents: np.ndarray  # (ni, 2)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def triangles_in(self, region: Region) -> np.ndarray:
        return np.flatnonzero(self.regions == REGION_CODES[region])

    def signed_areas(self) -> np.ndarray:
        p0, p1, p2 = (self.vertices[self.triangles[:, j]] for j in range(3))
        return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                      - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def boundary_edges_tagged(self, tag: BoundaryTag) -> np.ndarray:
        mask = np.array([t is tag for t in self.boundary_tags], dtype=bool)
        return self.boundary_edges[mask]

    def boundary_measure(self, tag: BoundaryTag) -> float:
        pairs = self.boundary_edges_tagged(tag)
        if len(pairs) == 0:
            return 0.0
        d = self.vertices[pairs[:, 1]] - self.vertices[pairs[:, 0]]
        return float(np.hypot(d[:, 0], d[:, 1]).sum())


def _check_count(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise ParameterError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


def _finalize_mesh(geometry: GeometrySpec, vertices, triangles, regions,
                   boundary_edges, boundary_tags: Sequence[BoundaryTag]) -> DecomposedMesh:
    """Derive edge topology and interface frames from the primary arrays."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    regions = np.asarray(regions, dtype=np.int8)
    boundary_edges = np.asarray(boundary_edges, dtype=np.int64).reshape(-1, 2)
    nt = len(triangles)

    pairs = np.sort(triangles[:, LOCAL_EDGES], axis=2).reshape(-1, 2)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    triangle_edges = np.asarray(inverse).reshape(nt, 3)
    edge_triangles = np.full((len(edges), 2), -1, dtype=np.int64)
    for t in range(nt):
        for e in triangle_edges[t]:
            slot = 0 if edge_triangles[e, 0] < 0 else 1
            edge_triangles[e, slot] = t

    edge_lookup: Dict[Tuple[int, int], int] = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}
    boundary_edge_ids = np.array(
        [edge_lookup.get((int(min(a, b)), int(max(a, b))), -1) for a, b in boundary_edges], dtype=np.int64)

    interface_rows = [i for i, tag in enumerate(boundary_tags) if tag is BoundaryTag.GAMMA_I]
    midpoints_x = [vertices[boundary_edges[i]].mean(axis=0)[0] for i in interface_rows]
    interface_rows = [interface_rows[i] for i in np.argsort(midpoints_x, kind="stable")]

    centroids = vertices[triangles].mean(axis=1)
    ids, free_tris, matrix_tris, normals, tangents = [], [], [], [], []
    for row in interface_rows:
        e = boundary_edge_ids[row]
        a, b = boundary_edges[row]
        owners = [t for t in (edge_triangles[e] if e >= 0 else ()) if t >= 0]
        free_t = next((t for t in owners if regions[t] == REGION_CODES[Region.FREE]), -1)
        matrix_t = next((t for t in owners if regions[t] == REGION_CODES[Region.MATRIX]), -1)
        direction = vertices[b] - vertices[a]
        direction = direction / np.hypot(direction[0], direction[1])
        normal = np.array([direction[1], -direction[0]])
        if free_t >= 0:
            if np.dot(centroids[free_t] - 0.5 * (vertices[a] + vertices[b]), normal) > 0.0:
                normal = -normal
        elif normal[1] > 0.0:
            normal = -normal
        ids.append(e)
        free_tris.append(free_t)
        matrix_tris.append(matrix_t)
        normals.append(normal)
        tangents.append(np.array([-normal[1], normal[0]]))

    return DecomposedMesh(
        geometry=geometry,
        vertices=_readonly(vertices),
        triangles=_readonly(triangles),
        regions=_readonly(regions),
        edges=_readonly(edges.astype(np.int64)),
        triangle_edges=_readonly(triangle_edges.astype(np.int64)),
        edge_triangles=_readonly(edge_triangles),
        boundary_edges=_readonly(boundary_edges),
        boundary_tags=tuple(boundary_tags),
        boundary_edge_ids=_readonly(boundary_edge_ids),
        interface_edge_ids=_readonly(np.array(ids, dtype=np.int64)),
        interface_free_triangles=_readonly(np.array(free_tris, dtype=np.int64)),
        interface_matrix_triangles=_readonly(np.array(matrix_tris, dtype=np.int64)),
        interface_normals=_readonly(np.array(normals, dtype=float).reshape(-1, 2)),
        interface_tangents=_readonly(np.array(tangents, dtype=float).reshape(-1, 2)),
    )


def build_decomposed_mesh(geom: GeometrySpec, nx: int, ny_f: int, ny_m: int) -> DecomposedMesh:
    """Structured triangulation, every cell split along its (0,0)-(1,1) diagonal."""
    nx = _check_count("nx", nx)
    ny_f = _check_count("ny_f", ny_f)
    ny_m = _check_count("ny_m", ny_m)
    ny = ny_f + ny_m

    xs = np.linspace(0.0, geom.width, nx + 1)
    ys = np.concatenate([np.linspace(0.0, geom.porous_height, ny_m + 1),
                         np.linspace(geom.porous_height, geom.total_height, ny_f + 1)[1:]])
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v00 = (j * (nx + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    row = np.repeat(j.ravel(), 2)
    regions = np.where(row < ny_m, REGION_CODES[Region.MATRIX], REGION_CODES[Region.FREE])

    def vid(col, r):
        return r * (nx + 1) + col

    edges: List[Tuple[int, int]] = []
    tags: List[BoundaryTag] = []
    for col in range(nx):
        edges.append((vid(col, 0), vid(col + 1, 0)))
        tags.append(BoundaryTag.GAMMA_M)
    for r in range(ny):
        tag = BoundaryTag.GAMMA_M if r < ny_m else BoundaryTag.GAMMA_F
        edges.append((vid(nx, r), vid(nx, r + 1)))
        tags.append(tag)
    for col in range(nx):
        edges.append((vid(col, ny), vid(col + 1, ny)))
        tags.append(BoundaryTag.GAMMA_F)
    for r in range(ny):
        tag = BoundaryTag.GAMMA_M if r < ny_m else BoundaryTag.GAMMA_F
        edges.append((vid(0, r), vid(0, r + 1)))
        tags.append(tag)
    for col in range(nx):
        edges.append((vid(col, ny_m), vid(col + 1, ny_m)))
        tags.append(BoundaryTag.GAMMA_I)

    mesh = _finalize_mesh(geom, vertices, triangles, regions, edges, tags)
    logger.info("built mesh %dx(%d+%d): %d vertices, %d triangles, %d interface edges",
                nx, ny_f, ny_m, mesh.n_vertices, mesh.n_triangles, len(mesh.interface_edge_ids))
    return mesh


def interface_frames(mesh: DecomposedMesh) -> List[InterfaceFrame]:
    frames = []
    for k, e in enumerate(mesh.interface_edge_ids):
        a, b = mesh.edges[e]
        d = mesh.vertices[b] - mesh.vertices[a]
        frames.append(InterfaceFrame(
            edge_id=int(e),
            normal=mesh.interface_normals[k].copy(),
            tangent=mesh.interface_tangents[k].copy(),
            length=float(np.hypot(d[0], d[1])),
        ))
    return frames


def validate_mesh(mesh: DecomposedMesh) -> List[MeshViolation]:
    """Check every mesh invariant; violations are returned, never raised."""
    violations: List[MeshViolation] = []
    geom = mesh.geometry
    V, T = mesh.vertices, mesh.triangles
    tol = 1e-12 * max(geom.total_height, geom.width)

    areas = mesh.signed_areas()
    for t in np.flatnonzero(areas <= 0.0):
        violations.append(MeshViolation("negative-area", f"triangle {t}",
                                        f"signed area {areas[t]:.3e} is not positive"))

    known = np.isin(mesh.regions, list(REGION_CODES.values()))
    for t in np.flatnonzero(~known):
        violations.append(MeshViolation("region", f"triangle {t}", f"unknown region code {mesh.regions[t]}"))
    ys = V[T, 1]
    is_free = mesh.regions == REGION_CODES[Region.FREE]
    is_matrix = mesh.regions == REGION_CODES[Region.MATRIX]
    straddle = (is_free & (ys.min(axis=1) < geom.porous_height - tol)) | \
               (is_matrix & (ys.max(axis=1) > geom.porous_height + tol))
    for t in np.flatnonzero(straddle):
        violations.append(MeshViolation("straddle", f"triangle {t}", "triangle crosses the interface y = Hm"))

    expected = geom.area
    if abs(areas.sum() - expected) > 1e-12 * expected:
        violations.append(MeshViolation("area", "mesh",
                                        f"triangle areas sum to {areas.sum():.17g}, expected {expected:.17g}"))

    owners: Dict[Tuple[int, int], List[int]] = {}
    for t, tri in enumerate(T):
        for a, b in LOCAL_EDGES:
            key = (int(min(tri[a], tri[b])), int(max(tri[a], tri[b])))
            owners.setdefault(key, []).append(t)
    for key, tris in owners.items():
        if len(tris) > 2:
            violations.append(MeshViolation("overshared-edge", f"edge {key}", f"shared by {len(tris)} triangles"))

    for row, (a, b) in enumerate(mesh.boundary_edges):
        if mesh.boundary_tags[row] is not BoundaryTag.GAMMA_I:
            continue
        key = (int(min(a, b)), int(max(a, b)))
        tris = owners.get(key, [])
        n_free = sum(1 for t in tris if is_free[t])
        n_matrix = sum(1 for t in tris if is_matrix[t])
        if n_free != 1 or n_matrix != 1:
            violations.append(MeshViolation(
                "nonconforming-interface", f"interface edge {key}",
                f"shared by {n_free} free and {n_matrix} matrix triangles, expected one of each"))
        if abs(V[a, 1] - geom.porous_height) > tol or abs(V[b, 1] - geom.porous_height) > tol:
            violations.append(MeshViolation("interface-position", f"interface edge {key}",
                                            "interface edge does not lie on y = Hm"))

    centroids = mesh.centroids()
    for k in range(len(mesh.interface_edge_ids)):
        n, tau = mesh.interface_normals[k], mesh.interface_tangents[k]
        entity = f"interface edge {int(mesh.interface_edge_ids[k])}"
        if abs(np.linalg.norm(n) - 1.0) > 1e-12 or abs(np.linalg.norm(tau) - 1.0) > 1e-12 \
                or abs(np.dot(n, tau)) > 1e-12:
            violations.append(MeshViolation("frame", entity, "interface frame is not orthonormal"))
        tf, tm = mesh.interface_free_triangles[k], mesh.interface_matrix_triangles[k]
        if tf < 0 or tm < 0:
            continue
        cf, cm = centroids[tf], centroids[tm]
        if cf[1] <= cm[1] or np.dot(cm - cf, n) <= 0.0:
            violations.append(MeshViolation("orientation", entity, "normal does not point from free to matrix"))

    for tag in (BoundaryTag.GAMMA_M, BoundaryTag.GAMMA_I):
        if mesh.boundary_measure(tag) <= 0.0:
            violations.append(MeshViolation("measure", tag.value, f"|{tag.value}| must be positive"))
    return violations


def write_mesh(mesh: DecomposedMesh, path: Union[str, Path]) -> Path:
    path = Path(path)
    lines = [MESH_HEADER, str(mesh.n_vertices)]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(str(mesh.n_triangles))
    lines += [f"{a} {b} {c} {REGION_FROM_CODE[int(r)].value}" for (a, b, c), r in zip(mesh.triangles, mesh.regions)]
    lines.append(str(len(mesh.boundary_edges)))
    lines += [f"{a} {b} {tag.value}" for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags)]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_mesh(path: Union[str, Path]) -> DecomposedMesh:
    tokens = Path(path).read_text().splitlines()
    if not tokens or tokens[0].strip() != MESH_HEADER:
        raise ParameterError(f"{path}: missing '{MESH_HEADER}' header")
    pos = 1

    def take():
        """Rows of the next section, which starts with its row count."""
        nonlocal pos
        if pos >= len(tokens):
            raise ParameterError(f"{path}: truncated before line {pos + 1}")
        count = int(tokens[pos])
        chunk = [line.split() for line in tokens[pos + 1:pos + 1 + count]]
        if len(chunk) < count:
            raise ParameterError(f"{path}: section at line {pos + 1} declares {count} rows, found {len(chunk)}")
        pos += 1 + count
        return chunk

    vertices = np.array([[float(x), float(y)] for x, y in take()])
    tri_rows = take()
    triangles = np.array([[int(a), int(b), int(c)] for a, b, c, _ in tri_rows], dtype=np.int64)
    regions = np.array([REGION_CODES[Region(tag)] for *_, tag in tri_rows], dtype=np.int8)
    edge_rows = take()
    boundary_edges = np.array([[int(a), int(b)] for a, b, _ in edge_rows], dtype=np.int64)
    tags = [BoundaryTag(tag) for *_, tag in edge_rows]

    matrix_vertices = triangles[regions == REGION_CODES[Region.MATRIX]].ravel()
    porous_height = float(vertices[matrix_vertices, 1].max())
    geometry = GeometrySpec(width=float(vertices[:, 0].max()),
                            porous_height=porous_height,
                            free_height=float(vertices[:, 1].max()) - porous_height)
    return _finalize_mesh(geometry, vertices, triangles, regions, boundary_edges, tags)
