"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MmseqError(Exception):
    exit_code = 4


class InputError(MmseqError, ValueError):
    """Bad arguments or malformed input files."""

    exit_code = 2


class FormatError(InputError):
    """Corrupt or incompatible binary/JSON artifact."""


class InfeasibleError(MmseqError):
    """No ball segment, unmatched cluster height, or unreachable target."""

    exit_code = 3


class InvariantError(MmseqError):
    """An internal consistency check failed."""

    exit_code = 4


class StageError(MmseqError):
    """Wraps an error raised inside a pipeline stage, tagging the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 4)
        super().__init__(f"[{stage}] {cause}")
