"""Exception hierarchy shared by all modules."""


class AqfedError(Exception):
    """Base class for every error raised by this package."""


class EmptyMask(AqfedError):
    pass


class FullMask(AqfedError):
    pass


class DegenerateComponent(AqfedError):
    pass


class TooFewPoints(AqfedError):
    pass


class DegreeTooHigh(AqfedError):
    pass


class DuplicateIndices(AqfedError):
    pass


class SingularSystem(AqfedError):
    pass


class ContourTooShort(AqfedError):
    pass


class ShapeMismatch(AqfedError):
    pass


class NonFiniteError(AqfedError):
    """Raised when an activation, loss or gradient stops being finite."""


class EmptyFederation(AqfedError):
    pass


class WeightSimplexViolation(AqfedError):
    pass


class AllSamplesDegenerate(AqfedError):
    pass


class ConfigError(AqfedError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class NoPairsFound(AqfedError):
    pass
