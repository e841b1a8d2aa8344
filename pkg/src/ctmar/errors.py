"""Exception hierarchy shared by all ctmar modules."""


class CTMarError(Exception):
    """Base class for ctmar errors."""


class ValidationError(CTMarError, ValueError):
    """Input violates a documented precondition (shape, finiteness, range)."""


class GeometryError(ValidationError):
    """Acquisition geometry and image grid are inconsistent."""


class FormatError(CTMarError, ValueError):
    """A TOMO file could not be decoded."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class UnknownDtypeError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class UnrecoverableInputError(ValidationError):
    """The metal trace leaves no data to interpolate from."""


class DivergenceError(CTMarError, ArithmeticError):
    """An iterative solver produced a non-finite objective."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite objective at iteration {iteration}")
