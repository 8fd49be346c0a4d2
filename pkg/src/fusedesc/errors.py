"""Exception hierarchy shared across the package."""


class FusedescError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(FusedescError, ValueError):
    """Operand dimensions are inconsistent with an operation's contract."""


class NumericsError(FusedescError, ArithmeticError):
    """A computation produced NaN/Inf or an otherwise invalid value."""


class FormatError(FusedescError, ValueError):
    """A serialized file is malformed (bad magic, truncation, bad field)."""


class DataError(FusedescError):
    """Input data (images, datasets, configs) is unusable."""
