"""Exception hierarchy for the lada engine.

Every error raised by the package derives from :class:`LadaError` so the CLI
can catch one type and exit with a structured message.
"""


class LadaError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(LadaError):
    """A file does not follow the expected on-disk format (magic, version)."""


class CorruptionError(LadaError):
    """A file has the right format markers but inconsistent payload size."""


class EmptyInputError(LadaError):
    """An operation received an empty set where at least one item is required."""


class DegenerateInputError(LadaError):
    """Numerically unusable input, e.g. a zero vector that cannot be normalized."""


class ParameterError(LadaError):
    """An argument is outside its documented domain."""


class RegistryError(LadaError):
    """Unknown, duplicate or missing task/class identifiers."""


class ShapeError(LadaError):
    """Dimension mismatch between inputs and model state."""


class ConvergenceError(LadaError):
    """An iterative fit failed to produce usable estimates."""


class ContractError(LadaError):
    """A call violated an operation precondition (caller bug, not data bug)."""


class NumericalError(LadaError):
    """Non-finite loss or gradient encountered during optimization."""


class CheckpointError(LadaError):
    """Checkpoint container is incompatible or internally inconsistent."""


class StateError(LadaError):
    """An object is not in the state required for the requested operation."""
