from typing import Any, Dict, Optional


class LabError(Exception):
    """Base class for every failure raised by the lab."""


class ValidationError(LabError, ValueError):
    """Precondition or parameter check failed."""


class ConfigError(ValidationError):
    """Run configuration violates the schema."""


class ModulusError(LabError):
    """A modulus failed a structural check (monotone, star-shaped, positive)."""

    def __init__(self, message: str, witness: Optional[tuple] = None):
        super().__init__(message)
        self.witness = witness


class InconclusiveDivergenceError(LabError):
    pass


class GeneratorEvaluationError(LabError):

    def __init__(self, message: str, coordinates: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.coordinates = coordinates or {}


class ImplicitSolveError(LabError):

    def __init__(self, node: int, paths: int, residual: float):
        super().__init__(
            f"implicit step did not converge at node {node}: "
            f"{paths} paths, max residual {residual:.3e}"
        )
        self.node = node
        self.paths = paths
        self.residual = residual


class RegressionError(LabError):

    def __init__(self, node: int, rank: int, size: int, condition: float):
        super().__init__(
            f"regression basis rank {rank} < {size} at node {node} "
            f"(condition estimate {condition:.3e})"
        )
        self.node = node
        self.rank = rank
        self.size = size
        self.condition = condition


class StepSizeError(LabError):
    pass


class HarnessError(LabError):

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.context = context or {}
