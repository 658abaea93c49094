"""Manufactured solutions for one subdomain at a time.

The velocity is the curl of psi = sin^2(pi x) sin^2(pi s) e^{-t}, with s the
height above the subdomain's lower edge, so it is divergence free and vanishes
with its normal derivative on the subdomain boundary. The temperature is
sin(pi x) sin(pi s) e^{-t} on the subdomain and zero elsewhere. Interface
conditions are replaced by clamping every trace to the exact solution.
"""
from typing import Dict, Tuple

import sympy

from .base_scenario import LayerProperties, Scenario, ScenarioFamily

x, y, t = sympy.symbols("x y t")

MMS_MODES = ("free", "matrix")
MMS_FINAL_TIME = 0.0625
BRINKMAN = 0.1
PERMEABILITY = 1.0


def _curl(psi) -> Tuple[sympy.Expr, sympy.Expr]:
    return sympy.diff(psi, y), -sympy.diff(psi, x)


def _laplacian(f):
    return sympy.diff(f, x, 2) + sympy.diff(f, y, 2)


def _on(expr, inside):
    return sympy.Piecewise((expr, inside), (0, True))


def _text(expr) -> str:
    return str(sympy.simplify(expr))


def manufactured_fields(mode: str, porous_height: float = 1.0, nu: float = 1.0, lam: float = 1.0,
                        varpi: float = 1.0) -> Dict[str, object]:
    """Exact solution and sources for mode "free" or "matrix", as expression strings in x, y, t."""
    if mode not in MMS_MODES:
        raise ValueError(f"unknown manufactured mode {mode!r}; expected one of {MMS_MODES}")
    hm = sympy.nsimplify(porous_height)
    s = y - hm if mode == "free" else y
    inside = y >= hm if mode == "free" else y <= hm
    decay = sympy.exp(-t)
    psi = sympy.sin(sympy.pi * x) ** 2 * sympy.sin(sympy.pi * s) ** 2 * decay
    u = _curl(psi)
    pressure = sympy.cos(sympy.pi * x) * sympy.cos(sympy.pi * s) * decay
    theta = sympy.sin(sympy.pi * x) * sympy.sin(sympy.pi * s) * decay
    buoyancy = (0, theta)

    g = sympy.diff(theta, t) + u[0] * sympy.diff(theta, x) + u[1] * sympy.diff(theta, y) - lam * _laplacian(theta)
    if mode == "free":
        force = [sympy.diff(u[i], t) + u[0] * sympy.diff(u[i], x) + u[1] * sympy.diff(u[i], y)
                 - nu * _laplacian(u[i]) + sympy.diff(pressure, (x, y)[i]) - buoyancy[i] for i in range(2)]
    else:
        force = [varpi * sympy.diff(u[i], t) + nu / PERMEABILITY * u[i] - BRINKMAN * _laplacian(u[i])
                 + sympy.diff(pressure, (x, y)[i]) - buoyancy[i] for i in range(2)]

    velocity, p_name, force_name = ("u_f", "P_f", "f_f") if mode == "free" else ("u_m", "P_m", "f_m")
    return {
        force_name: [_text(c) for c in force],
        "g": str(_on(sympy.simplify(g), inside)),
        "exact": {
            velocity: [_text(c) for c in u],
            p_name: _text(pressure),
            "theta": str(_on(theta, inside)),
        },
    }


class ManufacturedScenario(Scenario):
    """Unit-square subdomains stacked vertically; the inactive subdomain stays at rest."""

    def __init__(self, mode: str = "free", n: int = 4):
        super().__init__(f"mms_{mode}", ScenarioFamily.MANUFACTURED, LayerProperties(1.0, 1.0, 1.0, n, n, n))
        self.mode = mode
        self._setup_scenario()

    def _setup_scenario(self):
        fields = manufactured_fields(self.mode, self.layers.porous_height, varpi=self.material["varpi"])
        exact = fields["exact"]
        velocity = "u_f" if self.mode == "free" else "u_m"
        self.set_material(kappa={"kind": "constant", "value": PERMEABILITY},
                          kappa_bounds={"lower": PERMEABILITY, "upper": PERMEABILITY})
        self.set_scheme(dt=(1.0 / self.layers.nx) ** 2, xi=BRINKMAN, final_time=MMS_FINAL_TIME, sigma=1.0,
                        clamp=self.mode, sources=fields)
        self.set_initial(**{velocity: list(exact[velocity])})
        self.set_initial(theta=exact["theta"])
        self.set_experiment(kind="mms", mesh_levels=[4, 8, 16])
