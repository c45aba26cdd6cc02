"""Exception types shared across the package.

The CLI maps each family to a distinct exit code, so library code raises
these rather than bare ValueErrors when the failure is user-facing.
"""


class MapredictError(Exception):
    category = "error"


class ConfigError(MapredictError, ValueError):
    category = "config"

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line


class InfeasibleError(MapredictError, ValueError):
    """Constraint set admits no layout (e.g. box too small for the spacing)."""

    category = "infeasible"

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class NumericError(MapredictError, ArithmeticError):
    category = "numeric"


class TrainingDivergedError(NumericError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class FileFormatError(MapredictError, ValueError):
    category = "io"


class MalformedHeaderError(FileFormatError):
    pass


class VersionMismatchError(FileFormatError):
    def __init__(self, found, supported):
        super().__init__(f"file format version {found} is not supported (this build reads version {supported})")
        self.found = found
        self.supported = supported


class TruncatedFileError(FileFormatError):
    def __init__(self, message, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class ModelKindMismatchError(FileFormatError):
    def __init__(self, expected, found):
        super().__init__(f"model file holds kind {found!r}, expected {expected!r}")
        self.expected = expected
        self.found = found


class ShapeMismatchError(FileFormatError):
    pass
