"""Exception types shared across the package.

Each error carries a stable ``category`` string that the CLI maps to a
machine-readable error payload and a nonzero exit code.
"""


class AdaInferError(Exception):
    category = "error"


class InvalidInputError(AdaInferError, ValueError):
    category = "invalid-input"


class DegenerateDataError(AdaInferError, ValueError):
    """Raised when training data cannot support the requested fit."""

    category = "degenerate-data"


class TrainingFailureError(AdaInferError, RuntimeError):
    """Raised when an optimization run diverges (non-finite loss or gradient)."""

    category = "training-failure"


class TraceFormatError(AdaInferError, ValueError):
    """Raised on malformed trace files (header, schema, or value ranges)."""

    category = "trace-format"


class DeciderError(AdaInferError, RuntimeError):
    """Raised when an exit decider fails during the adaptive loop."""

    category = "decider"
