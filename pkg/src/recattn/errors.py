"""Exception hierarchy shared across the package.

Every error carries a short machine-parsable ``code`` used by the CLI
(`ERROR:<CODE>: message`).
"""


class RecAttnError(Exception):
    code = "ERROR"


class DimensionError(RecAttnError):
    """Tensor shapes do not satisfy an operation's contract."""

    code = "DIMENSION"


class ValidationError(RecAttnError):
    """A value-level precondition was violated (labels, ranges, lists)."""

    code = "VALIDATION"


class FormatError(RecAttnError):
    """A file on disk is malformed (TNSR, CSV, manifest)."""

    code = "FORMAT"


class ConfigError(RecAttnError):
    """Bad run configuration (unknown key, invalid value)."""

    code = "CONFIG"


class CheckpointError(RecAttnError):
    """Checkpoint does not match the model it is loaded into."""

    code = "CHECKPOINT"


class TrainingError(RecAttnError):
    """Training diverged or produced non-finite gradients."""

    code = "TRAINING"


class UsageError(RecAttnError):
    """Bad command-line invocation."""

    code = "USAGE"
