"""Exception hierarchy shared by every stage of the pipeline."""


class DebiasRecError(Exception):
    """Base class for all errors raised by this package."""


class DataError(DebiasRecError):
    """Input data violates a structural invariant."""


class ConfigError(DebiasRecError, ValueError):
    pass


class OverlapError(DataError):
    pass


class RangeError(DataError):
    pass


class PopularityMismatch(DataError):
    pass


class ParseError(DataError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptySplitError(DataError):
    pass


class EmptyInput(DataError):
    pass


class NoNegativeAvailable(DataError):
    pass


class GraphMissing(ConfigError):
    pass


class DimensionMismatch(DebiasRecError, ValueError):
    pass


class ZeroPopularity(DebiasRecError, ValueError):
    pass


class KTooLarge(DebiasRecError, ValueError):
    pass


class EmptyTruth(DebiasRecError, ValueError):
    pass


class ZeroReference(DebiasRecError, ValueError):
    pass


class ConstantSeries(DebiasRecError, ValueError):
    pass


class DivergedError(DebiasRecError, ArithmeticError):
    """A training loss or parameter became non-finite."""


class CheckpointError(DataError):
    pass
