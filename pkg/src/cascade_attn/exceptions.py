"""Exception hierarchy shared by every module."""


class CascadeAttnError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CascadeAttnError, ValueError):
    """Operand shapes are incompatible."""


class ArgumentError(CascadeAttnError, ValueError):
    """An argument is outside its legal domain (empty sequence, bad label...)."""


class NumericError(CascadeAttnError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ContractError(CascadeAttnError, ValueError):
    """A tape or gradient does not match the forward pass that produced it."""


class ConfigError(CascadeAttnError, ValueError):
    """A model or training configuration violates its invariants."""


class DataError(CascadeAttnError, ValueError):
    """Dataset content is inconsistent with the model or with itself."""


class FormatError(CascadeAttnError, ValueError):
    """A file on disk does not follow its binary or JSON layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
