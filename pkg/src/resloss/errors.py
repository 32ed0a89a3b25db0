"""Exception hierarchy shared by all resloss modules."""


class ReslossError(Exception):
    """Base class for every error raised by this package."""


class ParameterDomainError(ReslossError, ValueError):
    """A model parameter is outside its physical domain."""


class UnphysicalFitError(ParameterDomainError):
    """Diameter correction produced a non-positive internal quality factor."""


class RootFindingError(ReslossError, ArithmeticError):
    """The cubic photon-number equation could not be solved reliably."""


class NoResonanceError(ReslossError):
    """No resonance dip distinguishable from noise was found in a trace."""


class ConfigurationError(ReslossError, ValueError):
    """Inputs or options do not allow the requested computation."""


class DataQualityError(ReslossError, ValueError):
    """Measured data violates a precondition (e.g. SNR <= 1)."""


class DataError(ReslossError, ValueError):
    """Transport data without the expected features."""


class TemperatureLookupError(ReslossError, KeyError):
    """Temperature not present in a tabulated series."""


class ParseError(ReslossError, ValueError):
    """Malformed input file. ``line`` is 1-based, or None for file-level problems."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class FitError(ReslossError, RuntimeError):
    """Optimizer failure. ``best`` holds the best parameter vector reached."""

    def __init__(self, message, best=None, nfev=None):
        super().__init__(message)
        self.best = best
        self.nfev = nfev
