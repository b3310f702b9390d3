"""Exception hierarchy shared by all mf_varopt modules."""


class VarOptError(Exception):
    """Base class for every error raised by mf_varopt."""


class InvalidParameterError(VarOptError, ValueError):
    """A parameter violates its documented range (lambda = 0, odd N, L <= 0, ...)."""


class UnsupportedRegimeError(InvalidParameterError):
    """The operation is not defined for the regime of (lambda, T)."""


class NonLipschitzFieldError(InvalidParameterError):
    """The operation needs a field that is Lipschitz in space."""


class DomainError(VarOptError, ValueError):
    """A map was evaluated outside its domain."""


class ConsistencyError(VarOptError, RuntimeError):
    """An internal identity that must hold by construction was violated."""


class UndefinedBandError(VarOptError):
    """A sign field was queried inside the band |y| <= t where it is not defined."""

    def __init__(self, t, y):
        super().__init__(f"field undefined at t={t!r}, y={y!r} (|y| <= t)")
        self.t = t
        self.y = y


class IntegrationDomainError(VarOptError):
    """A characteristic left the region where its field is defined."""
