"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class NumericalError(ArithmeticError):
    """Raised when an optimization produces non-finite values or folds.

    ``payload`` carries the last good iterate (field, transform or log) so
    callers can inspect where things went wrong.
    """

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload
