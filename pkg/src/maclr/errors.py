"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class MaclrError(Exception):
    """Base class for all package errors."""


class ConfigError(MaclrError):
    """Invalid configuration, unknown keys, or violated preconditions."""


class DataError(MaclrError):
    """Problems with input data files or their referential integrity."""


class ParseError(DataError):
    """Malformed line in an input file; message carries the line number."""


class IntegrityError(DataError):
    """Duplicate or dangling ids across corpus files."""


class FormatError(DataError):
    """Corrupt or truncated binary artifact (e.g. checkpoint)."""


class CompatibilityError(DataError):
    """Artifact was produced under incompatible inputs (vocab hash mismatch)."""


class NumericError(MaclrError):
    """Non-finite values or other numeric failures during computation."""


class DimensionError(NumericError):
    """Operand shapes do not conform."""
