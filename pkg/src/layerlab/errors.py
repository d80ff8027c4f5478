"""Exception types shared across the package."""


class LayerlabError(Exception):
    """Base class for all layerlab errors."""


class ShapeError(LayerlabError, ValueError):
    """Operands have incompatible or invalid shapes."""


class NumericalError(LayerlabError, ArithmeticError):
    """A numerical routine failed (non-finite input, no convergence)."""


class UnwhitenedDataError(LayerlabError, ValueError):
    """An operation that assumes identity input covariance got raw data."""


class DivergenceError(LayerlabError, ArithmeticError):
    """A simulated trajectory blew up.

    Attributes:
        step: index of the first step at which the guard tripped.
    """

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class AlignmentError(LayerlabError, ValueError):
    """Weights no longer factor through the recorded singular bases."""


class RankDeficiencyError(LayerlabError, ValueError):
    """A matrix that must be invertible is numerically singular."""


class ConfigError(LayerlabError, ValueError):
    """An experiment configuration failed validation.

    Attributes:
        field: dotted path of the offending key, or None for file-level issues.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class IdxFormatError(LayerlabError, ValueError):
    """Base class for IDX file parse failures."""


class IdxMagicError(IdxFormatError):
    """IDX header carries an unexpected magic number."""


class IdxTruncatedError(IdxFormatError):
    """IDX payload is shorter than its header promises."""


class IdxCountMismatchError(IdxFormatError):
    """Image and label files disagree on the sample count."""
