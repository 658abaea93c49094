"""Physical coefficients, scheme parameters and the sigma calibration."""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .enums import CoefficientKind, Field, InterfaceLaw, LinearSolverKind, Region
from .errors import BoundViolationError, NumericalError, ParameterError

logger = logging.getLogger(__name__)

SAMPLE_RANGE = (-10.0, 10.0)
SAMPLE_COUNT = 1000
BOUND_RTOL = 1e-12
DENSE_EIGEN_LIMIT = 1500
EIGEN_TOL = 1e-14


@dataclass(frozen=True)
class Bounds:
    lower: float
    upper: float
    lipschitz: Optional[float] = None


@dataclass(frozen=True, eq=False)
class Coefficient:
    """Temperature-dependent coefficient s -> c(s)."""
    kind: CoefficientKind
    params: Mapping[str, Any]

    def __post_init__(self):
        if self.kind is CoefficientKind.SPLINE:
            knots = np.asarray(self.params["knots"], dtype=float)
            values = np.asarray(self.params["values"], dtype=float)
            if knots.ndim != 1 or knots.shape != values.shape or len(knots) < 2 or np.any(np.diff(knots) <= 0):
                raise ParameterError("spline knots must be strictly increasing and match the values")
            object.__setattr__(self, "_spline", PchipInterpolator(knots, values, extrapolate=False))

    @classmethod
    def from_dict(cls, spec: Mapping[str, Any]) -> "Coefficient":
        spec = dict(spec)
        try:
            kind = CoefficientKind(spec.pop("kind"))
        except (KeyError, ValueError) as e:
            raise ParameterError(f"invalid coefficient kind in {spec}: {e}") from e
        required = {
            CoefficientKind.CONSTANT: ("value",),
            CoefficientKind.AFFINE_CLAMPED: ("a", "b"),
            CoefficientKind.TANH: ("a", "b", "c", "d"),
            CoefficientKind.SPLINE: ("knots", "values"),
        }[kind]
        missing = [k for k in required if k not in spec]
        if missing:
            raise ParameterError(f"{kind.value} coefficient is missing {missing}")
        return cls(kind=kind, params=spec)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, **dict(self.params)}

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        p = self.params
        if self.kind is CoefficientKind.CONSTANT:
            return np.full_like(s, float(p["value"]))
        if self.kind is CoefficientKind.AFFINE_CLAMPED:
            lo, hi = p.get("lower"), p.get("upper")
            return np.clip(p["a"] + p["b"] * s, -np.inf if lo is None else lo, np.inf if hi is None else hi)
        if self.kind is CoefficientKind.TANH:
            return p["a"] + p["b"] * np.tanh(p["c"] * s + p["d"])
        knots = self._spline.x
        return self._spline(np.clip(s, knots[0], knots[-1]))

    def derivative(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        p = self.params
        if self.kind is CoefficientKind.CONSTANT:
            return np.zeros_like(s)
        if self.kind is CoefficientKind.AFFINE_CLAMPED:
            raw = p["a"] + p["b"] * s
            lo, hi = p.get("lower"), p.get("upper")
            inside = np.ones_like(s, dtype=bool)
            if lo is not None:
                inside &= raw >= lo
            if hi is not None:
                inside &= raw <= hi
            return np.where(inside, float(p["b"]), 0.0)
        if self.kind is CoefficientKind.TANH:
            return p["b"] * p["c"] / np.cosh(p["c"] * s + p["d"]) ** 2
        knots = self._spline.x
        inside = (s >= knots[0]) & (s <= knots[-1])
        return np.where(inside, self._spline.derivative()(np.clip(s, knots[0], knots[-1])), 0.0)


@dataclass(frozen=True, eq=False)
class Permeability:
    """Isotropic permeability K = kappa(x, y) I."""
    kind: CoefficientKind
    params: Mapping[str, Any]

    @classmethod
    def from_dict(cls, spec: Mapping[str, Any]) -> "Permeability":
        spec = dict(spec)
        kind = CoefficientKind(spec.pop("kind", "constant"))
        if kind not in (CoefficientKind.CONSTANT, CoefficientKind.AFFINE_CLAMPED):
            raise ParameterError(f"permeability supports constant and affine_clamped, got {kind.value}")
        return cls(kind=kind, params=spec)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, **dict(self.params)}

    def __call__(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        p = self.params
        if self.kind is CoefficientKind.CONSTANT:
            return np.full_like(x, float(p["value"]))
        raw = p.get("a", 0.0) + p.get("bx", 0.0) * x + p.get("by", 0.0) * y
        lo, hi = p.get("lower"), p.get("upper")
        return np.clip(raw, -np.inf if lo is None else lo, np.inf if hi is None else hi)


@dataclass(frozen=True, eq=False)
class MaterialModel:
    nu: Coefficient
    nu_bounds: Bounds
    lambda_f: Coefficient
    lambda_m: Coefficient
    lambda_bounds: Bounds
    kappa: Permeability
    kappa_bounds: Bounds
    alpha: float
    varpi: float

    def lam(self, region: Region) -> Coefficient:
        return self.lambda_f if region is Region.FREE else self.lambda_m

    def to_dict(self) -> Dict[str, Any]:
        def bounds(b: Bounds):
            out = {"lower": b.lower, "upper": b.upper}
            if b.lipschitz is not None:
                out["lipschitz"] = b.lipschitz
            return out
        return {
            "nu": self.nu.to_dict(), "nu_bounds": bounds(self.nu_bounds),
            "lambda_f": self.lambda_f.to_dict(), "lambda_m": self.lambda_m.to_dict(),
            "lambda_bounds": bounds(self.lambda_bounds),
            "kappa": self.kappa.to_dict(), "kappa_bounds": bounds(self.kappa_bounds),
            "alpha": self.alpha, "varpi": self.varpi,
        }


@dataclass(frozen=True, eq=False)
class SourceTerms:
    """Manufactured forcing f_f, f_m, g as callables of (x, y, t).

    dirichlet maps a field to its exact solution; its values at constrained
    dofs replace the homogeneous boundary data.
    """
    f_f: Optional[Callable] = None
    f_m: Optional[Callable] = None
    g: Optional[Callable] = None
    dirichlet: Mapping[Field, Callable] = field(default_factory=dict)

    @property
    def active(self) -> bool:
        return any(term is not None for term in (self.f_f, self.f_m, self.g))


@dataclass(frozen=True, eq=False)
class SchemeParams:
    dt: float
    xi: float
    sigma: float
    final_time: float
    picard_tol: float = 1e-10
    picard_max: int = 50
    linear_tol: float = 1e-12
    linear_max: int = 500
    varpi: float = 1.0
    sources: Optional[SourceTerms] = None
    buoyancy: bool = True
    interface_law: InterfaceLaw = InterfaceLaw.LIONS
    linear_solver: LinearSolverKind = LinearSolverKind.GMRES_ILU

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ParameterError(f"time step must be positive, got {self.dt}")
        if not 0.0 <= self.xi < 1.0:
            raise ParameterError(f"Brinkman parameter must lie in [0, 1), got {self.xi}")
        if not self.sigma > 0.0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if not self.final_time > 0.0:
            raise ParameterError(f"final time must be positive, got {self.final_time}")
        for name in ("picard_tol", "linear_tol"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        if self.picard_max < 1 or self.linear_max < 1:
            raise ParameterError("iteration limits must be at least 1")
        if self.varpi < 0.0:
            raise ParameterError(f"varpi must be nonnegative, got {self.varpi}")

    @property
    def has_sources(self) -> bool:
        return self.sources is not None and self.sources.active

    def with_dt(self, dt: float) -> "SchemeParams":
        return replace(self, dt=dt)


def _bounds_from(spec: Mapping[str, Any], name: str, need_lipschitz: bool) -> Bounds:
    if name not in spec:
        raise ParameterError(f"material is missing {name}")
    raw = spec[name]
    try:
        bounds = Bounds(float(raw["lower"]), float(raw["upper"]),
                        None if raw.get("lipschitz") is None else float(raw["lipschitz"]))
    except (KeyError, TypeError, ValueError) as e:
        raise ParameterError(f"invalid {name}: {raw!r}") from e
    if not 0.0 < bounds.lower <= bounds.upper:
        raise ParameterError(f"{name} must satisfy 0 < lower <= upper, got {raw!r}")
    if need_lipschitz and (bounds.lipschitz is None or bounds.lipschitz < 0.0):
        raise ParameterError(f"{name} needs a nonnegative lipschitz bound")
    return bounds


def _check_sampled(assumption: str, label: str, coefficient: Coefficient, bounds: Bounds):
    s = np.linspace(*SAMPLE_RANGE, SAMPLE_COUNT)
    values = coefficient(s)
    slopes = np.abs(coefficient.derivative(s))
    low = bounds.lower * (1.0 - BOUND_RTOL)
    high = bounds.upper * (1.0 + BOUND_RTOL)
    bad = np.flatnonzero(~np.isfinite(values) | (values < low) | (values > high))
    if len(bad):
        i = bad[0]
        raise BoundViolationError(assumption, f"{label}({s[i]:.6g}) = {values[i]:.6g} leaves "
                                              f"[{bounds.lower}, {bounds.upper}]")
    limit = bounds.lipschitz * (1.0 + BOUND_RTOL) + 1e-14
    bad = np.flatnonzero(slopes > limit)
    if len(bad):
        i = bad[0]
        raise BoundViolationError(assumption, f"|{label}'({s[i]:.6g})| = {slopes[i]:.6g} exceeds {bounds.lipschitz}")


def make_material(config, dofs=None) -> MaterialModel:
    """Build the material and verify (A1)-(A3) by sampling.

    kappa is sampled at the matrix and interface quadrature points of dofs
    when given, otherwise on an 11 x 11 grid of the unit square.
    """
    spec = config.to_dict() if hasattr(config, "to_dict") else dict(config)
    nu = Coefficient.from_dict(spec["nu"])
    lambda_f = Coefficient.from_dict(spec["lambda_f"])
    lambda_m = Coefficient.from_dict(spec["lambda_m"])
    kappa = Permeability.from_dict(spec["kappa"])
    material = MaterialModel(
        nu=nu, nu_bounds=_bounds_from(spec, "nu_bounds", True),
        lambda_f=lambda_f, lambda_m=lambda_m, lambda_bounds=_bounds_from(spec, "lambda_bounds", True),
        kappa=kappa, kappa_bounds=_bounds_from(spec, "kappa_bounds", False),
        alpha=float(spec["alpha"]), varpi=float(spec["varpi"]),
    )
    if not material.alpha > 0.0:
        raise ParameterError(f"alpha must be positive, got {material.alpha}")
    if material.varpi < 0.0:
        raise ParameterError(f"varpi must be nonnegative, got {material.varpi}")

    _check_sampled("A1", "nu", nu, material.nu_bounds)
    _check_sampled("A2", "lambda_f", lambda_f, material.lambda_bounds)
    _check_sampled("A2", "lambda_m", lambda_m, material.lambda_bounds)

    if dofs is not None:
        points = np.concatenate([dofs.quadrature(Region.MATRIX).points.reshape(-1, 2),
                                 dofs.interface_quadrature().points.reshape(-1, 2)])
    else:
        g = np.linspace(0.0, 1.0, 11)
        points = np.column_stack([c.ravel() for c in np.meshgrid(g, g)])
    k = kappa(points[:, 0], points[:, 1])
    kb = material.kappa_bounds
    bad = np.flatnonzero(~np.isfinite(k) | (k < kb.lower * (1.0 - BOUND_RTOL)) | (k > kb.upper * (1.0 + BOUND_RTOL)))
    if len(bad):
        i = bad[0]
        raise BoundViolationError("A3", f"kappa{tuple(points[i])} = {k[i]:.6g} leaves [{kb.lower}, {kb.upper}]")
    return material


def epsilon_star(material: MaterialModel) -> float:
    nu_low = material.nu_bounds.lower
    kappa_high = material.kappa_bounds.upper
    return 0.25 * min(nu_low, nu_low / kappa_high, material.alpha * nu_low / math.sqrt(kappa_high))


def dirichlet_eigenpair(dofs) -> Tuple[float, np.ndarray]:
    """Smallest eigenpair of the Dirichlet stiffness/mass pencil on the temperature space.

    The vector is a full nodal vector, zero on constrained nodes, with unit
    L2 norm and a nonnegative mean.
    """
    from .assembly import scalar_mass, scalar_stiffness

    space = dofs[Field.THETA]
    free = space.free
    K = scalar_stiffness(dofs, Field.THETA).tocsr()[free][:, free]
    M = scalar_mass(dofs, Field.THETA).tocsr()[free][:, free]
    if len(free) <= DENSE_EIGEN_LIMIT:
        values, vectors = eigh(K.toarray(), M.toarray(), subset_by_index=[0, 0])
    else:
        try:
            values, vectors = eigsh(K.tocsc(), k=1, M=M.tocsc(), sigma=0.0, which="LM", tol=EIGEN_TOL)
        except ArpackNoConvergence as e:
            raise NumericalError(f"shift-invert Lanczos did not converge: {e}") from e
    x = vectors[:, 0]
    x = x / np.sqrt(x @ (M @ x))
    vector = np.zeros(space.size)
    vector[free] = x if x.sum() >= 0.0 else -x
    logger.debug("Dirichlet eigenvalue %.12g on %d free temperature dofs", values[0], len(free))
    return float(values[0]), vector


def poincare_constant(dofs) -> float:
    """1 / smallest eigenvalue of the Dirichlet stiffness/mass pencil on the temperature space."""
    return 1.0 / dirichlet_eigenpair(dofs)[0]


def calibrate_sigma(material: MaterialModel, c_p: float, c_z: float) -> float:
    if not (c_p > 0.0 and c_z > 0.0):
        raise ParameterError(f"C_P and C_Z must be positive, got {c_p}, {c_z}")
    eps = epsilon_star(material)
    sigma = 4.0 * c_p * (c_z ** 2 + 1.0) / (eps * material.lambda_bounds.lower)
    logger.info("calibrated sigma = %.6g (C_P=%.6g, C_Z=%.6g, eps=%.6g)", sigma, c_p, c_z, eps)
    return sigma
