"""Exception types shared across the package.

The CLI maps these onto exit codes: config/schema/IO problems
(ConfigError, CheckpointError, ClipFormatError) exit 1, shape and
contract violations (ShapeError, ContractError) exit 2.
"""


class RefvidError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RefvidError):
    """A tensor dimension does not match what an operation requires."""

    def __init__(self, op: str, detail: str):
        self.op = op
        self.detail = detail
        super().__init__(f"{op}: {detail}")


class ContractError(RefvidError):
    """A documented precondition was violated."""


class ConfigError(RefvidError):
    """The pipeline configuration document is invalid."""


class CheckpointError(RefvidError):
    """A checkpoint container file is malformed or inconsistent."""


class ClipFormatError(RefvidError):
    """A clip directory or frame file does not follow the expected layout."""
