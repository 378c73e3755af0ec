"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: config problems exit 2,
data/checkpoint problems exit 3, numeric breakdowns exit 4.
"""


class SeqDiffError(Exception):
    """Base class for all package errors."""


class ShapeError(SeqDiffError):
    """Operand shapes are incompatible."""


class ContractError(SeqDiffError):
    """A documented precondition was violated by the caller."""


class ConfigError(SeqDiffError):
    """Invalid configuration value or combination."""


class DataError(SeqDiffError):
    """Malformed dataset, vocabulary, or payload mismatch."""


class NumericError(SeqDiffError):
    """NaN or other numeric breakdown during computation."""


class CheckpointError(SeqDiffError):
    """Corrupt or version-incompatible checkpoint file."""
