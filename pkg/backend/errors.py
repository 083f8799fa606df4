"""
Exception types shared by every qsense module
"""


class QSenseError(Exception):
    """Base class for all errors raised by qsense"""


class ConfigError(QSenseError, ValueError):
    """Bad configuration key, value or parameter combination"""

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class DomainError(QSenseError, ValueError):
    """Argument outside the domain of a formula"""


class DegenerateFloorError(QSenseError, ValueError):
    """Optical floor does not sit above the electronic floor"""


class TraceLengthError(QSenseError, ValueError):
    """Time trace is empty or too short for the requested analysis"""


class FitError(QSenseError, RuntimeError):
    """Fit did not converge or the data cannot identify the parameter"""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class CsvVersionError(QSenseError, ValueError):
    """CSV file carries an unknown schema version header"""
