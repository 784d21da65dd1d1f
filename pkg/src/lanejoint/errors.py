"""Exception hierarchy shared by every module."""


class LaneError(ValueError):
    """Base class for all lanejoint errors."""


class InvalidConfig(LaneError):
    pass


class DegenerateLane(LaneError):
    pass


class InsufficientPoints(LaneError):
    pass


class OutOfDomain(LaneError):
    pass


class ShapeMismatch(LaneError):
    pass


class TooFewPoints(LaneError):
    pass


class InvalidClass(LaneError):
    pass


class TooManyGroundTruths(LaneError):
    pass


class InvalidMatrix(LaneError):
    pass


class InvalidAssignment(LaneError):
    pass


class EmptyInput(LaneError):
    pass


class InvalidRig(LaneError):
    pass


class BehindCamera(LaneError):
    pass


class FormatError(LaneError):
    """Malformed lane file or config; message carries line/frame/lane context."""
