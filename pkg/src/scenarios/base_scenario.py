import copy
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional


class ScenarioFamily(Enum):
    CAVITY = "cavity"
    REFERENCE = "reference"
    MANUFACTURED = "manufactured"


@dataclass
class LayerProperties:
    width: float
    free_height: float
    porous_height: float
    nx: int
    ny_f: int
    ny_m: int


def constant(value: float) -> Dict[str, Any]:
    return {"kind": "constant", "value": value}


def constant_bounds(value: float, lipschitz: Optional[float] = 0.0) -> Dict[str, Any]:
    bounds = {"lower": value, "upper": value}
    if lipschitz is not None:
        bounds["lipschitz"] = lipschitz
    return bounds


class Scenario:
    """A named preset; get_initial_state() renders it as a configuration document."""

    def __init__(self, name: str, family: ScenarioFamily, layers: LayerProperties):
        self.name = name
        self.family = family
        self.layers = layers
        self.material: Dict[str, Any] = {
            "nu": constant(1.0), "nu_bounds": constant_bounds(1.0),
            "lambda_f": constant(1.0), "lambda_m": constant(1.0), "lambda_bounds": constant_bounds(1.0),
            "kappa": constant(1e-2), "kappa_bounds": constant_bounds(1e-2, None),
            "alpha": 1.0, "varpi": 1.0,
        }
        self.scheme: Dict[str, Any] = {}
        self.initial: Dict[str, Any] = {"u_f": ["0", "0"], "u_m": ["0", "0"], "theta": "0"}
        self.experiment: Dict[str, Any] = {}
        self.notes: List[str] = []

    def set_material(self, **values):
        self.material.update(values)

    def set_scheme(self, **values):
        self.scheme.update(values)

    def set_initial(self, **values):
        self.initial.update(values)

    def set_experiment(self, **values):
        self.experiment.update(values)

    def add_note(self, note: str):
        self.notes.append(note)

    def get_initial_state(self) -> dict:
        """Get the configuration document for this scenario."""
        return {
            "geometry": {
                "Lx": self.layers.width,
                "Hf": self.layers.free_height,
                "Hm": self.layers.porous_height,
                "nx": self.layers.nx,
                "ny_f": self.layers.ny_f,
                "ny_m": self.layers.ny_m,
            },
            "material": copy.deepcopy(self.material),
            "scheme": copy.deepcopy(self.scheme),
            "initial": copy.deepcopy(self.initial),
            "experiment": copy.deepcopy(self.experiment),
        }
