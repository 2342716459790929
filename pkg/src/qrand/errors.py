"""Exception hierarchy shared by every qrand module."""


class QrandError(Exception):
    """Base class for all errors raised by qrand."""


class ValidationError(QrandError, ValueError):
    """An object failed its invariants (Hermiticity, trace, completeness...)."""


class RegisterError(QrandError, ValueError):
    """Unknown, duplicated or mismatched register labels."""


class DimensionError(QrandError, ValueError):
    """Dimension mismatch, or a computation would exceed the configured cap."""


class InfeasibleError(DimensionError):
    """A simulation would exceed the tracked-dimension cap."""
