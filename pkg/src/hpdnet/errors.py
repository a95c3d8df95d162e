"""Exception hierarchy shared across the package.

Three branches matter to callers: usage problems (bad arguments or
configuration), data problems (files, labels, shapes of user-supplied
inputs), and numeric failures (iterations that did not converge). The CLI
maps these branches to exit codes 1, 2 and 3.
"""


class HpdError(Exception):
    """Base class for all package errors."""


class UsageError(HpdError):
    """Invalid arguments or configuration."""


class DataError(HpdError):
    """Malformed or inconsistent input data."""


class NumericError(HpdError):
    """A numerical procedure failed or did not converge."""


# --- linear algebra -------------------------------------------------------

class NotSquare(UsageError):
    pass


class DimensionMismatch(UsageError):
    pass


class NotPositiveDefinite(NumericError):
    pass


class NoConvergence(NumericError):
    """Jacobi eigendecomposition exceeded its sweep budget."""


class NotConverged(NumericError):
    """Newton-Schulz residual above tolerance; input likely ill-conditioned."""


class SeriesDiverged(NumericError):
    """Mercator series argument outside the unit ball."""


class DomainError(UsageError):
    """Scalar function undefined at an eigenvalue of the input."""


# --- network layers -------------------------------------------------------

class BadDims(UsageError):
    pass


class RankDeficient(NumericError):
    pass


class TapeMismatch(UsageError):
    pass


class BadLabel(UsageError):
    pass


class KernelTooLarge(UsageError):
    pass


# --- data and training ----------------------------------------------------

class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class NonFiniteEntry(DataError):
    pass


class NoLabeledPixels(DataError):
    pass


class BadSpec(DataError):
    pass


class EmptySet(UsageError):
    pass


class EmptyTestSet(DataError):
    pass


class Diverged(NumericError):
    """Training loss became non-finite."""
