from typing import List, Optional


class SimulationError(Exception):
    """Base class for every error raised by the simulator."""


class ParameterError(SimulationError, ValueError):
    """Invalid argument: counts, sizes, points, degrees."""


class BoundViolationError(SimulationError):
    def __init__(self, assumption: str, message: str):
        super().__init__(f"({assumption}) {message}")
        self.assumption = assumption


class NumericalError(SimulationError):
    """An iterative numerical procedure did not converge."""


class SolverError(NumericalError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (achieved relative residual {residual:.3e})")
        self.residual = residual


class StepDivergenceError(NumericalError):
    def __init__(self, message: str, history: List[float]):
        super().__init__(message)
        self.history = list(history)


class RunAbortedError(SimulationError):
    def __init__(self, message: str, trajectory: Optional[object] = None):
        super().__init__(message)
        self.trajectory = trajectory


class ConfigError(SimulationError):
    """Configuration could not be parsed or validated."""


class CertificateUndefinedError(SimulationError):
    """The energy certificate is undefined while source terms are active."""
