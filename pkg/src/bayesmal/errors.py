"""Exception types raised across the toolkit."""


class BayesmalError(Exception):
    pass


class DataError(BayesmalError, ValueError):
    """Invalid or inconsistent input data (bad files, wrong shapes, single-class sets)."""


class DatasetFormatError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionMismatchError(DataError):
    pass


class ModelFileError(DataError):
    """Base class for persisted-posterior problems."""


class UnrecognizedFormatError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class ShapeMismatchError(ModelFileError):
    pass


class NumericError(BayesmalError, ArithmeticError):
    """Training produced a non-finite loss or parameter."""
