"""
paneitz/errors.py

Exception hierarchy shared by every module of the lab.
- One root class, PaneitzError, so callers can catch everything the lab raises
- Subclasses carry the diagnostic payload (required budget, trajectory dump, ...)
"""
from typing import Any, Optional


class PaneitzError(Exception):
    """Base class for all errors raised by the package."""


class DomainError(PaneitzError, ValueError):
    """Input outside the mathematical domain (n < 5, non-unit point, K <= 0, ...)."""


class ChartSingularityError(DomainError):
    """Stereographic projection evaluated at its own pole."""


class QuadratureBudgetError(DomainError):
    """Quadrature budget below the documented minimum."""

    def __init__(self, message: str, required: int):
        super().__init__(message)
        self.required = required


class ConsistencyError(PaneitzError):
    """Two independent evaluations of the same quantity disagree."""


class PreconditionError(PaneitzError):
    """A documented precondition of an operation does not hold."""


class FlowConfigurationError(PaneitzError):
    """Flow state lies in two critical neighbourhoods at once (mu too large)."""


class IntegrationError(PaneitzError):
    """Adaptive step size underflow; `trajectory` holds the states reached so far."""

    def __init__(self, message: str, trajectory: Optional[Any] = None):
        super().__init__(message)
        self.trajectory = trajectory


class DegenerateCriticalPointError(PaneitzError):
    """A nondegenerate critical point was required but Laplacian or Hessian vanish."""

    def __init__(self, message: str, point: Optional[Any] = None):
        super().__init__(message)
        self.point = point


class PerturbationError(PaneitzError):
    """The perturbation verification loop could not meet the C^1 tolerance."""

    def __init__(self, message: str, minimal_tolerance: Optional[float] = None):
        super().__init__(message)
        self.minimal_tolerance = minimal_tolerance


class UnsupportedPairingError(PaneitzError, NotImplementedError):
    """inner_product_P was asked for a pairing it has no reduction for."""


class PoleSingularityError(DomainError):
    """Axisymmetric field with a non-vanishing derivative at a pole."""


class ConfigError(PaneitzError):
    """Configuration file, environment or flags could not be resolved."""
