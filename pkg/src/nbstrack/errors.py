"""Shared exception types."""


class NbsError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(NbsError):
    """A matrix required to be positive definite failed a pivot check."""


class NonSymmetric(NbsError):
    """A matrix required to be symmetric was not, beyond tolerance."""


class DimensionMismatch(NbsError):
    """Vector/matrix dimensions do not chain."""


class NonFinite(NbsError):
    """A computation produced NaN or Inf."""


class NonFiniteDerivative(NonFinite):
    """An ODE stage evaluation produced NaN or Inf."""


class NonFiniteLoss(NonFinite):
    """A training loss became NaN or Inf."""


class HorizonTooShort(NbsError):
    """A rollout log is too short for the requested metric."""


class SchemaError(NbsError):
    """A config or data file failed schema validation."""
