"""Exception hierarchy shared by all kernels and the CLI/service layers.

Each error carries a stable ``code`` string (used by the HTTP service and
the CLI's structured stderr line) and the process exit code the CLI maps
it to.
"""


class BatError(Exception):
    """Base class for all library errors."""

    code = "Error"
    exit_code = 2  # data error by default


class BadMagic(BatError):
    code = "BadMagic"


class BadDims(BatError):
    code = "BadDims"


class TruncatedPayload(BatError):
    code = "TruncatedPayload"


class DimMismatch(BatError):
    code = "DimMismatch"


class BadLabel(BatError):
    code = "BadLabel"


class TooLarge(BatError):
    code = "TooLarge"


class DegenerateWeights(BatError):
    code = "DegenerateWeights"


class FireCountMismatch(BatError):
    code = "FireCountMismatch"


class EmptySet(BatError):
    code = "EmptySet"


class BandInfeasible(BatError):
    code = "BandInfeasible"
    exit_code = 3
