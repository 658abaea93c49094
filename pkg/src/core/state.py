from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional

import numpy as np

from .enums import Field, FIELD_ORDER
from .errors import ParameterError

FIELD_ATTRIBUTES = {
    Field.U_F: "u_f",
    Field.P_F: "p_f",
    Field.U_M: "u_m",
    Field.P_M: "p_m",
    Field.THETA: "theta",
    Field.MU: "mu",
}


@dataclass(frozen=True, eq=False)
class State:
    """Snapshot of every unknown at time t, full nodal vectors per field."""
    t: float
    u_f: np.ndarray
    p_f: np.ndarray
    u_m: np.ndarray
    p_m: np.ndarray
    mu: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        for attr in FIELD_ATTRIBUTES.values():
            array = np.array(getattr(self, attr), dtype=float)
            array.setflags(write=False)
            object.__setattr__(self, attr, array)

    def __getitem__(self, f: Field) -> np.ndarray:
        return getattr(self, FIELD_ATTRIBUTES[f])

    @classmethod
    def zeros(cls, dofs, t: float = 0.0) -> "State":
        return cls.from_fields(t, {f: dofs.zeros(f) for f in FIELD_ORDER})

    @classmethod
    def from_fields(cls, t: float, fields: Mapping[Field, np.ndarray]) -> "State":
        return cls(t=float(t), **{FIELD_ATTRIBUTES[f]: fields[f] for f in FIELD_ORDER})

    def updated(self, t: float, fields: Mapping[Field, np.ndarray]) -> "State":
        return replace(self, t=float(t), **{FIELD_ATTRIBUTES[f]: v for f, v in fields.items()})

    def check(self, dofs):
        for f in FIELD_ORDER:
            if self[f].shape != (dofs[f].size,):
                raise ParameterError(f"state field {f.value} has shape {self[f].shape}, "
                                     f"expected ({dofs[f].size},)")

    def constraint_defects(self, dofs, prescribed: Optional[Mapping[Field, np.ndarray]] = None) -> Dict[Field, float]:
        """max |value - prescribed| over the constrained entries of each field; prescribed defaults to zero."""
        prescribed = prescribed or {}
        out = {}
        for f in FIELD_ORDER:
            idx = dofs[f].constrained
            target = prescribed.get(f)
            expected = 0.0 if target is None else np.asarray(target, dtype=float)[idx]
            out[f] = float(np.abs(self[f][idx] - expected).max(initial=0.0))
        return out

    def to_dict(self) -> Dict[str, object]:
        return {"t": self.t, **{f.value: self[f].tolist() for f in FIELD_ORDER}}


@dataclass
class StepDiagnostics:
    step: int
    t: float
    dt: float
    picard_iterations: int
    update_norm: float
    update_history: List[float] = field(default_factory=list)
    linear_iterations: List[int] = field(default_factory=list)
    linear_residual: float = 0.0
    momentum_residual: float = 0.0
    temperature_residual: float = 0.0
    interface_flux: float = 0.0
    divergence: Dict[str, float] = field(default_factory=dict)  # |B u| per velocity field
    divergence_scale: float = 0.0   # max(|u|, |momentum rhs|) of the last momentum solve
    halvings: int = 0
    min_substep_slack: Optional[float] = None
    thermal_work: float = 0.0       # sum of dt (lambda grad theta, grad theta) over substeps
    dissipation_work: float = 0.0   # sum of dt D_sigma over substeps
    energy: Optional[object] = None  # diagnostics.EnergyReport


@dataclass
class Trajectory:
    """States of a run, one diagnostics record per step."""
    states: List[State] = field(default_factory=list)
    diagnostics: List[StepDiagnostics] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)

    def append(self, state: State, diagnostics: StepDiagnostics):
        if self.states and state.t <= self.states[-1].t:
            raise ParameterError(f"trajectory times must increase: {state.t} after {self.states[-1].t}")
        self.states.append(state)
        self.diagnostics.append(diagnostics)

    @property
    def initial(self) -> State:
        return self.states[0]

    @property
    def final(self) -> State:
        return self.states[-1]

    @property
    def steps(self) -> int:
        return len(self.diagnostics)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])
