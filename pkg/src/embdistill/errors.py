class DataValidationError(ValueError):
    """Invalid input data, file contents, or configuration (CLI exit code 2)."""


class NumericalError(ArithmeticError):
    """Non-finite values or other numerical failure mid-computation (CLI exit code 3)."""
