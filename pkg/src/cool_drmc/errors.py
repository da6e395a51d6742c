"""Exception types shared across the package."""


class CoolDrmcError(Exception):
    """Base class for all package errors."""


class UnboundedBody(CoolDrmcError):
    pass


class InvalidObservation(CoolDrmcError):
    pass


class EmptyStructure(CoolDrmcError):
    pass


class InsufficientData(CoolDrmcError):
    pass


class InsufficientN(CoolDrmcError):
    """Sample size too small for the finite-sample moment bounds."""


class EmptyEstimate(CoolDrmcError):
    pass


class TooManyCompositions(CoolDrmcError):
    pass


class NotPSD(CoolDrmcError):
    pass


class InvalidRadius(CoolDrmcError):
    pass


class InvalidGrouping(CoolDrmcError):
    pass


class MalformedSet(CoolDrmcError):
    pass


class ConstraintConflict(CoolDrmcError):
    pass


class ScenarioError(CoolDrmcError):
    """Malformed scenario file. Carries the offending location when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
