"""
Exception hierarchy for the simulator.

Every error carries the exit code the CLI returns for it:
2 for validation/configuration problems, 3 for numerical failures.
"""
from typing import Optional, Tuple


class QAnomalyError(Exception):
    """Base class for all simulator errors."""

    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ValidationError(QAnomalyError):
    """Invalid parameters or inconsistent inputs."""

    exit_code = 2


class ConfigurationError(ValidationError):
    """A configuration that cannot be simulated (e.g. matrix too small for its band)."""


class NotFoundError(QAnomalyError):
    """A requested experiment or artifact does not exist."""

    exit_code = 2


class NumericalError(QAnomalyError):
    """Base class for failures of the numerics."""

    exit_code = 3


class DegeneracyError(NumericalError):
    def __init__(self, pair: Tuple[int, int], gap: float):
        super().__init__(f"Near-degenerate levels {pair[0]} and {pair[1]} (gap={gap:.3e})")
        self.pair = pair
        self.gap = gap


class IntegrationError(NumericalError):
    def __init__(self, t: float, drift: float):
        super().__init__(f"Norm drift {drift:.3e} exceeds tolerance at t={t:.6g}")
        self.t = t
        self.drift = drift


class EdgeGuardError(NumericalError):
    def __init__(self, t: float, edge_probability: float, dim: Optional[int] = None):
        hint = f" (N={dim})" if dim is not None else ""
        super().__init__(
            f"Probability {edge_probability:.3e} reached the matrix edge at t={t:.6g}{hint}; enlarge N"
        )
        self.t = t
        self.edge_probability = edge_probability
        self.dim = dim


class SingularityError(NumericalError):
    """Evaluation at a singular point of a spectral function."""


class DivergenceError(NumericalError):
    """An integrand that is not integrable over the declared window."""


class DomainError(NumericalError):
    """A theory formula evaluated outside its domain of validity."""


class WindowError(NumericalError):
    """Too few samples inside a fit window."""


class NonDiffusiveError(NumericalError):
    def __init__(self, D: float, stderr: float):
        super().__init__(f"Fitted diffusion D={D:.4g} is negative beyond 2 sigma (stderr={stderr:.3g})")
        self.D = D
        self.stderr = stderr
