"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class UnsupportedModeError(ValueError):
    """The requested sampling or evaluation mode is not available for this model."""


class UnsupportedClosedFormError(ValueError):
    """No closed form is known for this (family, q) pair; use the numeric route."""


class DensityUnavailableError(ValueError):
    """The potential measure has no Lebesgue density (lattice family)."""


class InversionError(RuntimeError):
    """Numerical transform inversion failed its convergence diagnostic."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InvalidChainError(ValueError):
    """A generator matrix violates the chain requirements."""


class DegenerateConditioningError(ValueError):
    """The requested conditioning has zero mass or a vanishing h-function."""
