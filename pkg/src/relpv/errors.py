"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class ParameterError(ValueError):
    """A hyperparameter is outside its valid domain."""


class FormatError(ValueError):
    """A serialized file could not be decoded."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""
