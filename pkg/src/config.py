import copy
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import sympy
from dotenv import load_dotenv

from src.core.enums import ClampMode, ExperimentKind, InterfaceLaw, LinearSolverKind
from src.core.errors import ConfigError

logger = logging.getLogger(__name__)

load_dotenv()

ENV_LOG_LEVEL = "NSDB_LOG_LEVEL"
ENV_OUTPUT_DIR = "NSDB_OUTPUT_DIR"
EIGENMODE = "eigenmode"

X, Y, T = sympy.symbols("x y t")

DEFAULT_CONFIG: Dict[str, Dict[str, Any]] = {
    "geometry": {"Lx": 1.0, "Hf": 0.5, "Hm": 0.5, "nx": 8, "ny_f": 4, "ny_m": 4},
    "material": {
        "nu": {"kind": "constant", "value": 1.0},
        "nu_bounds": {"lower": 1.0, "upper": 1.0, "lipschitz": 0.0},
        "lambda_f": {"kind": "constant", "value": 1.0},
        "lambda_m": {"kind": "constant", "value": 1.0},
        "lambda_bounds": {"lower": 1.0, "upper": 1.0, "lipschitz": 0.0},
        "kappa": {"kind": "constant", "value": 1e-2},
        "kappa_bounds": {"lower": 1e-2, "upper": 1e-2},
        "alpha": 1.0,
        "varpi": 1.0,
    },
    "scheme": {
        "dt": 1e-2,
        "xi": 1e-3,
        "final_time": 2.0,
        "sigma": "auto",
        "picard_tol": 1e-10,
        "picard_max": 50,
        "linear_tol": 1e-12,
        "linear_max": 500,
        "buoyancy": True,
        "interface_law": "lions",
        "linear_solver": "gmres_ilu",
        "clamp": "none",
        "sources": None,
    },
    "initial": {"u_f": ["0", "0"], "u_m": ["0", "0"], "theta": "1 - y"},
    "experiment": {
        "kind": "run",
        "levels": 3,
        "amplitude": 1e-6,
        "amplitudes": [1e-6, 1e-5, 1e-4],
        "twin_picard_tols": None,
        "twin_time": 1.0,
        "mesh_levels": [4, 8, 16],
    },
    "output": {"directory": None, "snapshot_stride": 10},
}

SOURCE_KEYS = ("f_f", "f_m", "g", "exact")
EXACT_KEYS = ("u_f", "P_f", "u_m", "P_m", "theta")


def compile_expression(text: Union[str, float, List]) -> Callable:
    """Compile a sympy expression in x, y, t (or a two-element list of them) to a numpy callable."""
    if isinstance(text, (list, tuple)):
        if len(text) != 2:
            raise ConfigError(f"vector expressions need two components, got {text!r}")
        parts = [compile_expression(c) for c in text]
        return lambda x, y, t=0.0: [p(x, y, t) for p in parts]
    try:
        expr = sympy.sympify(str(text), locals={"x": X, "y": Y, "t": T})
    except (sympy.SympifyError, TypeError, SyntaxError) as e:
        raise ConfigError(f"cannot parse expression {text!r}: {e}") from e
    unknown = expr.free_symbols - {X, Y, T}
    if unknown:
        raise ConfigError(f"expression {text!r} uses unknown symbols {sorted(map(str, unknown))}")
    fn = sympy.lambdify((X, Y, T), expr, modules="numpy")
    return lambda x, y, t=0.0: np.broadcast_to(np.asarray(fn(x, y, t), dtype=float), np.shape(x))


def _merge_block(name: str, defaults: Dict[str, Any], given: Any) -> Dict[str, Any]:
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"block '{name}' must be an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {unknown}")
    merged = copy.deepcopy(defaults)
    merged.update(copy.deepcopy(given))
    return merged


def _number(block: str, key: str, value, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{block}.{key} must be a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"{block}.{key} must be an integer, got {value!r}")
    return kind(value)


def _enum(block: str, key: str, enum_cls, value):
    try:
        return enum_cls(value)
    except ValueError as e:
        choices = [m.value for m in enum_cls]
        raise ConfigError(f"{block}.{key} must be one of {choices}, got {value!r}") from e


@dataclass
class GeometryConfig:
    Lx: float
    Hf: float
    Hm: float
    nx: int
    ny_f: int
    ny_m: int

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GeometryConfig":
        return cls(**{k: _number("geometry", k, data[k], int if k.startswith("n") else float) for k in data})


@dataclass
class MaterialConfig:
    nu: Dict[str, Any]
    nu_bounds: Dict[str, Any]
    lambda_f: Dict[str, Any]
    lambda_m: Dict[str, Any]
    lambda_bounds: Dict[str, Any]
    kappa: Dict[str, Any]
    kappa_bounds: Dict[str, Any]
    alpha: float
    varpi: float

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MaterialConfig":
        for key in ("nu", "nu_bounds", "lambda_f", "lambda_m", "lambda_bounds", "kappa", "kappa_bounds"):
            if not isinstance(data[key], dict):
                raise ConfigError(f"material.{key} must be an object")
        return cls(**{k: (_number("material", k, v) if k in ("alpha", "varpi") else copy.deepcopy(v))
                      for k, v in data.items()})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SchemeConfig:
    dt: float
    xi: float
    final_time: float
    sigma: Union[float, str]
    picard_tol: float
    picard_max: int
    linear_tol: float
    linear_max: int
    buoyancy: bool
    interface_law: InterfaceLaw
    linear_solver: LinearSolverKind
    clamp: ClampMode
    sources: Optional[Dict[str, Any]]

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SchemeConfig":
        sigma = data["sigma"]
        if sigma != "auto":
            sigma = _number("scheme", "sigma", sigma)
        sources = data["sources"]
        if sources is not None:
            if not isinstance(sources, dict):
                raise ConfigError("scheme.sources must be an object or null")
            unknown = sorted(set(sources) - set(SOURCE_KEYS))
            if unknown:
                raise ConfigError(f"unknown keys in 'scheme.sources': {unknown}")
            unknown = sorted(set(sources.get("exact") or {}) - set(EXACT_KEYS))
            if unknown:
                raise ConfigError(f"unknown keys in 'scheme.sources.exact': {unknown}")
        if not isinstance(data["buoyancy"], bool):
            raise ConfigError("scheme.buoyancy must be true or false")
        return cls(
            dt=_number("scheme", "dt", data["dt"]),
            xi=_number("scheme", "xi", data["xi"]),
            final_time=_number("scheme", "final_time", data["final_time"]),
            sigma=sigma,
            picard_tol=_number("scheme", "picard_tol", data["picard_tol"]),
            picard_max=_number("scheme", "picard_max", data["picard_max"], int),
            linear_tol=_number("scheme", "linear_tol", data["linear_tol"]),
            linear_max=_number("scheme", "linear_max", data["linear_max"], int),
            buoyancy=data["buoyancy"],
            interface_law=_enum("scheme", "interface_law", InterfaceLaw, data["interface_law"]),
            linear_solver=_enum("scheme", "linear_solver", LinearSolverKind, data["linear_solver"]),
            clamp=_enum("scheme", "clamp", ClampMode, data["clamp"]),
            sources=copy.deepcopy(sources),
        )

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        for key in ("interface_law", "linear_solver", "clamp"):
            out[key] = getattr(self, key).value
        return out


@dataclass
class InitialConfig:
    u_f: List[str]
    u_m: List[str]
    theta: str

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "InitialConfig":
        for key in ("u_f", "u_m"):
            if not isinstance(data[key], (list, tuple)) or len(data[key]) != 2:
                raise ConfigError(f"initial.{key} must be a list of two expressions")
        return cls(u_f=[str(c) for c in data["u_f"]], u_m=[str(c) for c in data["u_m"]], theta=str(data["theta"]))

    @property
    def theta_is_eigenmode(self) -> bool:
        return self.theta.strip() == EIGENMODE


@dataclass
class ExperimentConfig:
    kind: ExperimentKind
    levels: int
    amplitude: float
    amplitudes: List[float]
    twin_picard_tols: Optional[List[float]]
    twin_time: float
    mesh_levels: List[int]

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        twins = data["twin_picard_tols"]
        if twins is not None and (not isinstance(twins, list) or len(twins) != 2):
            raise ConfigError("experiment.twin_picard_tols must be null or a list of two tolerances")
        return cls(
            kind=_enum("experiment", "kind", ExperimentKind, data["kind"]),
            levels=_number("experiment", "levels", data["levels"], int),
            amplitude=_number("experiment", "amplitude", data["amplitude"]),
            amplitudes=[_number("experiment", "amplitudes", a) for a in data["amplitudes"]],
            twin_picard_tols=None if twins is None else [_number("experiment", "twin_picard_tols", v) for v in twins],
            twin_time=_number("experiment", "twin_time", data["twin_time"]),
            mesh_levels=[_number("experiment", "mesh_levels", n, int) for n in data["mesh_levels"]],
        )

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["kind"] = self.kind.value
        return out


@dataclass
class OutputConfig:
    directory: Optional[str]
    snapshot_stride: int

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OutputConfig":
        stride = _number("output", "snapshot_stride", data["snapshot_stride"], int)
        if stride < 1:
            raise ConfigError("output.snapshot_stride must be at least 1")
        directory = data["directory"]
        return cls(directory=None if directory is None else str(directory), snapshot_stride=stride)


BLOCKS = {
    "geometry": GeometryConfig,
    "material": MaterialConfig,
    "scheme": SchemeConfig,
    "initial": InitialConfig,
    "experiment": ExperimentConfig,
    "output": OutputConfig,
}


class Config:
    """Validated run configuration built from DEFAULT_CONFIG and a JSON document."""

    def __init__(self, data: Optional[Dict[str, Any]] = None, source: Optional[str] = None):
        data = {} if data is None else data
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = sorted(set(data) - set(DEFAULT_CONFIG))
        if unknown:
            raise ConfigError(f"unknown configuration blocks: {unknown}")
        self.source = source
        self.current_config = {name: _merge_block(name, DEFAULT_CONFIG[name], data.get(name))
                               for name in DEFAULT_CONFIG}
        try:
            self.geometry = GeometryConfig.from_dict(self.current_config["geometry"])
            self.material = MaterialConfig.from_dict(self.current_config["material"])
            self.scheme = SchemeConfig.from_dict(self.current_config["scheme"])
            self.initial = InitialConfig.from_dict(self.current_config["initial"])
            self.experiment = ExperimentConfig.from_dict(self.current_config["experiment"])
            self.output = OutputConfig.from_dict(self.current_config["output"])
        except (KeyError, TypeError) as e:
            raise ConfigError(f"invalid configuration: {e}") from e

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Config":
        return cls(data)

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "Config":
        from src.scenarios import preset_config

        data = preset_config(name)
        for block, values in overrides.items():
            data.setdefault(block, {}).update(values)
        return cls(data, source=f"preset:{name}")

    @classmethod
    def load_config(cls, path: Union[str, Path]) -> "Config":
        """Load a configuration file; parse and validation problems raise ConfigError."""
        path = Path(path)
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from e
        return cls(data, source=str(path))

    def save_config(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=4, sort_keys=True)
        return path

    def to_dict(self) -> Dict[str, Any]:
        return {
            "geometry": asdict(self.geometry),
            "material": self.material.to_dict(),
            "scheme": self.scheme.to_dict(),
            "initial": asdict(self.initial),
            "experiment": self.experiment.to_dict(),
            "output": asdict(self.output),
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def replace(self, **blocks) -> "Config":
        """Copy with some blocks partially overridden, e.g. replace(scheme={"xi": 0.5})."""
        data = self.to_dict()
        for block, values in blocks.items():
            if block not in data:
                raise ConfigError(f"unknown configuration block {block!r}")
            data[block].update(values)
        return Config(data, source=self.source)

    def output_directory(self, override: Optional[str] = None) -> Path:
        return Path(override or self.output.directory or os.environ.get(ENV_OUTPUT_DIR) or "output")


def load_config(path: Union[str, Path]) -> Config:
    return Config.load_config(path)


def default_log_level() -> str:
    return os.environ.get(ENV_LOG_LEVEL, "INFO").upper()
