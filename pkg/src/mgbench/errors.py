"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid argument value or inconsistent dimensions."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite or non-SPD intermediate."""
