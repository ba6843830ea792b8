"""Exception hierarchy shared by all modules."""


class Geoflow3bError(Exception):
    """Base class for library errors."""


class ConfigError(Geoflow3bError, ValueError):
    """Invalid or inconsistent run configuration."""


class NumericalError(Geoflow3bError, ArithmeticError):
    """A numerical procedure could not produce a trustworthy result."""


class DegenerateConfigurationError(NumericalError):
    """Coincident bodies, vanishing Jacobi vectors or similar singular geometry."""


class BoundaryError(NumericalError):
    """The state reached or crossed the admissible boundary E = U."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class DegenerateFrameError(NumericalError):
    """A frame system has no solution (zero or indefinite metric block)."""


class StepUnderflowError(NumericalError):
    """Adaptive step size fell below the representable minimum."""


class SingularCoefficientError(NumericalError):
    """An auxiliary coefficient (for example b_k) is singular at this point."""


class CFLError(NumericalError):
    """Explicit finite-difference step violates its stability bound."""


class EmptyLevelSetError(NumericalError):
    """No point of the requested level surface lies in the search box."""
