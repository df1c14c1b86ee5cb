"""Exception hierarchy shared across the package.

Each error class maps to a CLI exit code via EXIT_CODES; everything not
listed there exits with the generic failure code of the config class.
"""


class DuocastError(Exception):
    """Base class for all package errors."""


class ConfigError(DuocastError):
    """Invalid configuration value or combination (CLI exit code 1)."""


class DataError(DuocastError):
    """Bad input data: missing values, zero variance, irregular sampling (exit code 2)."""


class ParseError(DataError):
    """Input file could not be parsed; message carries the offending row."""


class ShapeError(DuocastError):
    """Array arguments whose shapes do not match the declared contract."""


class EncodingError(DuocastError):
    """Token ids outside the backend vocabulary."""


class PromptOverflowError(DuocastError):
    """Rendered prompt exceeds the backbone context window minus the learnable rows."""


class NormalizationError(DuocastError):
    """Degenerate vector (zero norm) passed to l2 normalization."""


class ContractError(DuocastError):
    """Caller violated a documented numeric precondition (e.g. non-unit vectors)."""


class CheckpointError(DuocastError):
    """Checkpoint file is malformed or incompatible with the current config."""


class TrainingDivergenceError(DuocastError):
    """Loss became non-finite (exit code 3)."""


EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_TRAINING = 3
