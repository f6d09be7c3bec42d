"""Exception hierarchy shared across the package.

Every error that can surface through the CLI carries a distinct exit code so
that scripted callers can branch on failure kind without parsing messages.
"""


class EegspatError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DimensionError(EegspatError):
    """Array shapes incompatible with an operation; message names the axis."""

    exit_code = 3


class ConfigError(EegspatError):
    """Invalid configuration value (rates, windows, hyperparameters)."""

    exit_code = 4


class LabelError(EegspatError):
    """Malformed label: out-of-range speaker index, non-one-hot target."""

    exit_code = 5


class EmbeddingIndexError(EegspatError):
    """Embedding lookup index outside [0, vocabulary)."""

    exit_code = 6


class StateError(EegspatError):
    """Operation invoked out of order, e.g. backward without a cached forward."""

    exit_code = 7


class TrainingError(EegspatError):
    """Non-finite loss or gradient during optimization."""

    exit_code = 8


class NumericalError(EegspatError):
    """Singular or ill-conditioned linear system."""

    exit_code = 9


class PreprocessingError(EegspatError):
    """Unrecoverable signal-cleanup failure, e.g. every channel rejected."""

    exit_code = 10


class ContainerFormatError(EegspatError):
    """Binary or CSV container fails validation against its header."""

    exit_code = 11


class UnknownModelError(EegspatError):
    """Model name not one of relloc / attloc / mtm."""

    exit_code = 12


class MissingClassError(EegspatError):
    """A class required by an analysis is absent from the given split."""

    exit_code = 13


class MissingInputError(EegspatError):
    """Required input file does not exist."""

    exit_code = 14


class StructuralError(EegspatError):
    """Network lacks a layer the analysis requires (e.g. no spatial conv)."""

    exit_code = 15
