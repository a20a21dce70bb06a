"""Exception hierarchy shared by all modules."""


class BlockReachError(Exception):
    """Base class for all errors raised by blockreach."""


class Unbounded(BlockReachError):
    """A support query or LP is unbounded in the requested direction."""


class EmptySet(BlockReachError):
    """An operation that needs a nonempty set received an empty one."""


class NumericalFailure(BlockReachError):
    """An iterative numerical routine failed (no convergence, overflow)."""


class DimensionMismatch(BlockReachError, ValueError):
    """Operands live in different ambient dimensions."""


class StructureMismatch(BlockReachError, ValueError):
    """Decomposed operands do not share a block structure."""


class MissingBlock(BlockReachError):
    """A block marked as not computed was required."""


class ConfigError(BlockReachError, ValueError):
    """Invalid analysis configuration."""


class ParseError(BlockReachError, ValueError):
    """Malformed model file."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(field)
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class DimensionError(ParseError):
    """A model file declares matrices or vectors of inconsistent sizes."""
