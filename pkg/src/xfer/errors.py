"""Exception hierarchy.

Two families matter to callers: :class:`DataError` (bad or inconsistent
input, CLI exit code 2) and :class:`NumericalError` (a well-formed input on
which the computation is undefined or failed, CLI exit code 3).
"""


class XferError(Exception):
    """Base class for every error raised by this package."""


class DataError(XferError, ValueError):
    """Input could not be read or is inconsistent."""


class FormatError(DataError):
    """Structural problem in a text file (ragged rows, empty file)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ParseError(DataError):
    """A cell or token did not parse."""

    def __init__(self, message, line=None, column=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class BadMagicError(DataError):
    pass


class TruncatedPayloadError(DataError):
    pass


class UnsupportedDtypeError(DataError):
    pass


class NumericalError(XferError, ArithmeticError):
    """The computation is undefined for this input or did not converge."""


class InsufficientSamplesError(NumericalError):
    pass


class NotPSDError(NumericalError):
    pass


class ZeroVarianceError(NumericalError):
    pass


class RankError(NumericalError):
    """Requested more feature dimensions than the DTM has nonzero modes."""

    def __init__(self, k, rank):
        super().__init__(f"requested k={k} but the DTM has rank {rank}")
        self.k = k
        self.rank = rank


class ConvergenceError(NumericalError):
    def __init__(self, message, last_objective=None):
        super().__init__(message)
        self.last_objective = last_objective


class DegenerateTaskError(NumericalError):
    pass


class InsufficientColorsError(DegenerateTaskError):
    pass


class InsufficientTrialsError(NumericalError):
    pass
