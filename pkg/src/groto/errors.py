"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataFormatError -> 3,
TrainingError (and subclasses) -> 4.
"""


class GrotoError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GrotoError):
    """Invalid or infeasible configuration; message names the key path."""


class DataFormatError(GrotoError):
    """Malformed input file (bad magic, truncation, shape mismatch)."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DimensionError(GrotoError):
    """Empty input or mismatched shapes where the operation needs agreement."""


class DegenerateInputError(GrotoError):
    """Input outside an operation's domain, e.g. a zero-norm vector."""


class EngineError(GrotoError):
    """Gradient-graph construction error (unsupported primitive, bad arity)."""


class TrainingError(GrotoError):
    """Training could not complete."""


class PretrainError(TrainingError):
    """Source pretraining missed its accuracy target within the epoch cap."""

    def __init__(self, message, best_accuracy):
        super().__init__(f"{message} (best accuracy {best_accuracy:.4f})")
        self.best_accuracy = best_accuracy


class MiningError(TrainingError):
    """Positive-class mining found no evidence of shared classes."""


class NonFiniteError(TrainingError):
    """A numeric operation produced NaN or Inf; message names the culprit."""
