"""Exception hierarchy shared across the pipeline."""


class GreenSentryError(Exception):
    """Base class for all package errors."""


class DataError(GreenSentryError, ValueError):
    """Input data is malformed or unusable."""


class ParseError(DataError):
    """A timestamp or CSV cell could not be parsed."""


class NotCalibratedError(DataError):
    def __init__(self, msg="model not calibrated"):
        super().__init__(msg)


class NumericalError(GreenSentryError, ArithmeticError):
    """A non-finite value appeared during forward pass or training."""
