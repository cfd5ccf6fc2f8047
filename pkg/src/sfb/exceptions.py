"""Exception hierarchy shared by every sfb module."""


class SfbError(Exception):
    """Base class for all errors raised by sfb."""


class DataError(SfbError, ValueError):
    """Problem with the input data itself."""


class ParseError(DataError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class GapError(DataError):
    def __init__(self, region, month):
        self.region = region
        self.month = month
        super().__init__(f"region {region!r}: missing month {month}")


class EmptySeriesError(DataError):
    pass


class PartitionError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DimError(SfbError, ValueError):
    pass


class NumericError(SfbError, ValueError):
    pass


class ConvergenceError(SfbError, RuntimeError):
    def __init__(self, message, gap=None):
        self.gap = gap
        super().__init__(message)


class SearchError(SfbError, RuntimeError):
    pass


class DegenerateClusterError(SfbError, RuntimeError):
    pass


class FitError(SfbError, RuntimeError):
    pass


class SelectError(SfbError, RuntimeError):
    pass


class CellError(SfbError, RuntimeError):
    def __init__(self, region, model_id, origin, cause):
        self.region = region
        self.model_id = model_id
        self.origin = origin
        self.cause = cause
        super().__init__(f"{region}/{model_id} failed at origin {origin}: {cause}")


class ZeroActualError(SfbError, ValueError):
    pass


class DegenerateBaselineError(SfbError, ValueError):
    pass


class AlignmentError(SfbError, ValueError):
    pass


class VarianceError(SfbError, ArithmeticError):
    pass


class ConfigError(SfbError, ValueError):
    def __init__(self, field, message=""):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)
