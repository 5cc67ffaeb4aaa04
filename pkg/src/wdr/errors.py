"""Exception types shared across the package."""


class WDRError(Exception):
    pass


class ParameterError(WDRError, ValueError):
    """A distribution or model parameter is outside its support."""


class IntervalError(ParameterError):
    pass


class DegenerateError(WDRError, ArithmeticError):
    """All probability mass is zero, so nothing can be sampled."""


class NumericalError(WDRError, ArithmeticError):
    pass


class ConvergenceError(NumericalError):
    pass


class ParseError(WDRError, ValueError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class RejectedObservationError(WDRError, ValueError):
    pass
