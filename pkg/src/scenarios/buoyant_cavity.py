from .base_scenario import LayerProperties, Scenario, ScenarioFamily


class BuoyantCavityScenario(Scenario):
    """Free fluid over a porous layer, heated from below; u0 = 0 and theta0 = 1 - y."""

    def __init__(self, varpi: float = 1.0, nx: int = 16, ny: int = 8):
        name = "buoyant_cavity" if varpi > 0.0 else "buoyant_cavity_quasistatic"
        super().__init__(name, ScenarioFamily.CAVITY, LayerProperties(1.0, 0.5, 0.5, nx, ny, ny))
        self._setup_scenario(varpi)

    def _setup_scenario(self, varpi: float):
        self.set_material(varpi=varpi)
        self.set_scheme(dt=1e-2, xi=1e-3, final_time=2.0, sigma="auto", buoyancy=True)
        # the interpolant is clamped to zero on the outer boundary by the temperature constraint
        self.set_initial(theta="1 - y")
        self.set_experiment(levels=3, amplitude=1e-6, amplitudes=[1e-6, 1e-5, 1e-4],
                            twin_picard_tols=[1e-8, 1e-12], twin_time=1.0)


class ZeroDataScenario(Scenario):
    """All data zero; the zero state is a fixed point of every step."""

    def __init__(self):
        super().__init__("zero_data", ScenarioFamily.REFERENCE, LayerProperties(1.0, 0.5, 0.5, 4, 2, 2))
        self.set_scheme(dt=1e-2, xi=1e-3, final_time=1.0, sigma=1.0)


class DiffusionScenario(Scenario):
    """Pure conduction from the first discrete Dirichlet eigenmode; buoyancy is off so u stays zero."""

    def __init__(self):
        super().__init__("diffusion", ScenarioFamily.REFERENCE, LayerProperties(1.0, 0.5, 0.5, 8, 4, 4))
        self.set_scheme(dt=5e-2, xi=1e-3, final_time=0.5, sigma=1.0, buoyancy=False)
        self.set_initial(theta="eigenmode")
        self.set_experiment(kind="dt-refine", levels=4)


def create_buoyant_cavity(varpi: float = 1.0) -> Scenario:
    return BuoyantCavityScenario(varpi=varpi)
