"""Exception hierarchy shared by every bagforge module.

The CLI maps these onto exit codes: domain/config/graph/numeric problems
exit 1, file-format and I/O problems exit 2.
"""


class BagforgeError(Exception):
    """Base class for all engine errors."""


class ShapeError(BagforgeError):
    """Tensor shape or dtype contract violated."""


class GraphError(BagforgeError):
    """Tape misuse: loss not on the tape, or a consumed tape reused."""


class NumericError(BagforgeError):
    """Non-finite value produced where the contract requires finiteness."""


class DomainError(BagforgeError):
    """Input outside an operation's stated domain."""


class ConfigError(BagforgeError):
    """Invalid run configuration."""


class FormatError(BagforgeError):
    """Malformed container file; carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
