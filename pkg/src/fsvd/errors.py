"""Exception hierarchy shared across the package."""


class FsvdError(Exception):
    """Base class for all package errors."""


# --- ingestion / dataset ---

class MalformedRow(FsvdError):
    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class NonFiniteValue(FsvdError):
    pass


class EmptyDataset(FsvdError):
    pass


class DegenerateTimeRange(FsvdError):
    pass


# --- spline ---

class TooFewKnots(FsvdError):
    pass


class NonIncreasingKnots(FsvdError):
    pass


class BasisMismatch(FsvdError):
    pass


class SingularSystem(FsvdError):
    pass


class DimensionMismatch(FsvdError):
    pass


# --- decomposition ---

class AllMissingColumn(FsvdError):
    pass


class AllZeroInput(FsvdError):
    pass


class DegenerateScale(FsvdError):
    pass


# --- selection ---

class TooFewComponents(FsvdError):
    pass


# --- tasks ---

class SubjectOutOfRange(FsvdError):
    pass


class NotEnoughComponents(FsvdError):
    pass


class NonOrthogonalB(FsvdError):
    pass


class EmDivergence(FsvdError):
    pass


class SingularClusterCovariance(FsvdError):
    pass


class RankDeficientDesign(FsvdError):
    pass


# --- metrics / simlab ---

class ZeroNorm(FsvdError):
    pass


class ZeroDenominator(FsvdError):
    pass


class LengthMismatch(FsvdError):
    pass


class ShapeMismatch(FsvdError):
    pass


class EmptyCluster(FsvdError):
    pass


class SchemaError(FsvdError):
    """Unknown or incompatible serialized schema."""
