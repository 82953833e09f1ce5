"""Exception types shared across the package."""


class ModgapError(ValueError):
    """Base class for all errors raised by this package."""


class ShapeMismatch(ModgapError):
    pass


class ZeroNormRow(ModgapError):
    def __init__(self, row: int, norm: float):
        super().__init__(f"row {row} has near-zero norm {norm:.3e}")
        self.row = row
        self.norm = norm


class EmptyInput(ModgapError):
    pass


class NonFiniteInput(ModgapError):
    pass


class SingleModality(ModgapError):
    pass


class BatchTooSmall(ModgapError):
    pass


class IndexOutOfRange(ModgapError):
    pass


class KOutOfRange(ModgapError):
    pass


class TargetUnreachable(ModgapError):
    pass


class TooFewPoints(ModgapError):
    pass


class LengthMismatch(ModgapError):
    pass


class MissingLabels(ModgapError):
    pass


class InvalidSpec(ModgapError):
    pass


class InvalidAngle(ModgapError):
    pass


class DivergedLoss(ModgapError):
    pass


class ConfigError(ModgapError):
    """Raised for malformed run-configuration documents (unknown keys, bad types)."""


class DataFormatError(ModgapError):
    """Raised for malformed embedding files."""
