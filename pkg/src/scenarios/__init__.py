"""Preset scenarios, selectable by name."""
from typing import Callable, Dict

from src.core.errors import ConfigError

from .base_scenario import Scenario
from .buoyant_cavity import BuoyantCavityScenario, DiffusionScenario, ZeroDataScenario, create_buoyant_cavity
from .manufactured import ManufacturedScenario

PRESETS: Dict[str, Callable[[], Scenario]] = {
    "buoyant_cavity": lambda: create_buoyant_cavity(varpi=1.0),
    "buoyant_cavity_quasistatic": lambda: create_buoyant_cavity(varpi=0.0),
    "zero_data": ZeroDataScenario,
    "diffusion": DiffusionScenario,
    "mms_free": lambda: ManufacturedScenario("free"),
    "mms_matrix": lambda: ManufacturedScenario("matrix"),
}


def preset_config(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name]().get_initial_state()
