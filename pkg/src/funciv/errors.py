"""Exception hierarchy shared by every module."""


class FunctionalIVError(Exception):
    """Base class for all errors raised by this package."""


class InvalidGridError(FunctionalIVError, ValueError):
    pass


class InvalidBasisError(FunctionalIVError, ValueError):
    pass


class GridMismatchError(FunctionalIVError, ValueError):
    pass


class DimensionError(FunctionalIVError, ValueError):
    pass


class UnderdeterminedError(FunctionalIVError, ValueError):
    pass


class RankDeficientError(FunctionalIVError, ValueError):
    """Design matrix is numerically rank deficient.

    ``rank`` and ``n_columns`` describe the offending design.
    """

    def __init__(self, message: str, rank: int = -1, n_columns: int = -1):
        super().__init__(message)
        self.rank = rank
        self.n_columns = n_columns


class InsufficientDataError(FunctionalIVError, ValueError):
    pass


class AsymmetricInputError(FunctionalIVError, ValueError):
    pass


class WeakInstrumentError(FunctionalIVError):
    """A first-stage regression on the instrument is not identified."""


class RatioDegenerateError(FunctionalIVError):
    pass


class InvalidCorrelationError(FunctionalIVError, ValueError):
    pass


class SchemaError(FunctionalIVError, ValueError):
    pass


class RowError(FunctionalIVError, ValueError):
    """Too many malformed rows in an input file.

    ``bad_lines`` holds ``(line_number, message)`` pairs.
    """

    def __init__(self, message: str, bad_lines=()):
        super().__init__(message)
        self.bad_lines = list(bad_lines)


class EmptyCohortError(FunctionalIVError):
    pass
