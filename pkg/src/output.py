"""Files written by a run: mesh, energy table, state snapshots and experiment reports."""
import csv
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from src.core.enums import Field, FIELD_ORDER
from src.core.fem import DofMap, region_mean
from src.core.mesh import DecomposedMesh, write_mesh
from src.core.state import State, Trajectory

logger = logging.getLogger(__name__)

ENERGY_HEADER = ["step", "t", "E_sigma", "kinetic_f", "kinetic_m", "thermal", "D_viscous", "D_darcy",
                 "D_bjsj", "D_brinkman", "D_thermal", "R", "slack", "picard_iters", "linear_residual"]
MESH_FILE = "mesh.txt"
ENERGY_FILE = "energy.csv"
REPORT_FILE = "report.json"


def _g17(value: Optional[float]) -> str:
    return "nan" if value is None else format(float(value), ".17g")


def energy_rows(trajectory: Trajectory) -> List[List[str]]:
    rows = []
    for diag in trajectory.diagnostics:
        e = diag.energy
        rows.append([str(diag.step), _g17(diag.t), _g17(e.E_sigma), _g17(e.kinetic_f), _g17(e.kinetic_m),
                     _g17(e.thermal), _g17(e.D_viscous), _g17(e.D_darcy), _g17(e.D_bjsj), _g17(e.D_brinkman),
                     _g17(e.D_thermal), _g17(e.R), _g17(e.slack), str(diag.picard_iterations),
                     _g17(diag.linear_residual)])
    return rows


def write_energy_csv(trajectory: Trajectory, path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ENERGY_HEADER)
        writer.writerows(energy_rows(trajectory))
    return path


def snapshot(state: State, step: int, dofs: DofMap) -> Dict[str, Any]:
    return {
        "step": step,
        "t": state.t,
        "mesh": MESH_FILE,
        "fields": {f.value: state[f].tolist() for f in FIELD_ORDER},
        "pressure_zero_mean": {
            f.value: (state[f] - region_mean(dofs, f, state[f])).tolist() for f in (Field.P_F, Field.P_M)
        },
    }


def snapshot_steps(n_states: int, stride: int) -> List[int]:
    return list(range(0, n_states, stride))


def write_snapshots(trajectory: Trajectory, dofs: DofMap, directory: Union[str, Path], stride: int) -> List[Path]:
    directory = Path(directory)
    paths = []
    for step in snapshot_steps(len(trajectory.states), stride):
        path = directory / f"state_{step}.json"
        with open(path, "w") as f:
            json.dump(snapshot(trajectory.states[step], step, dofs), f)
        paths.append(path)
    return paths


def _plain(value):
    """JSON-safe copy: numpy scalars and arrays become Python numbers and lists, enums their values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Enum):
        return value.value
    return value


def write_report(report: Dict[str, Any], directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / REPORT_FILE
    with open(path, "w") as f:
        json.dump(_plain(report), f, indent=2, sort_keys=True)
    logger.info("wrote %s", path)
    return path


def write_outputs(trajectory: Trajectory, mesh: DecomposedMesh, dofs: DofMap, directory: Union[str, Path],
                  snapshot_stride: int = 10) -> Dict[str, Any]:
    """Mesh, energy.csv and strided snapshots of one run; OSError propagates to the caller."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {
        "mesh": write_mesh(mesh, directory / MESH_FILE),
        "energy": write_energy_csv(trajectory, directory / ENERGY_FILE),
        "snapshots": write_snapshots(trajectory, dofs, directory, snapshot_stride),
    }
    logger.info("wrote %d snapshots and %d energy rows to %s", len(written["snapshots"]),
                trajectory.steps, directory)
    return written
