"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Raised when an input violates an operation's preconditions."""


class NumericalError(ArithmeticError):
    """Raised when a computation cannot be completed stably."""


class IllConditioned(NumericalError):
    """Raised for least-squares problems without a unique solution."""
