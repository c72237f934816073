"""Exception types raised across the package."""


class PlanarImpactError(Exception):
    """Base class for all package errors."""


class NonPositiveDefinite(PlanarImpactError):
    pass


class ZeroIncomingVelocity(PlanarImpactError):
    pass


class NotApproaching(PlanarImpactError):
    pass


class NoConsistentBranch(PlanarImpactError):
    pass


class StepTooCoarse(PlanarImpactError):
    pass


class DegenerateJacobian(PlanarImpactError):
    pass


class EmptyBatch(PlanarImpactError):
    pass


class ParseError(PlanarImpactError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class MonotonicityError(ParseError):
    pass


class TooShort(PlanarImpactError):
    pass


class WindowTooSmall(PlanarImpactError):
    pass


class TooFew(PlanarImpactError):
    pass


class StartsPenetrating(PlanarImpactError):
    pass
