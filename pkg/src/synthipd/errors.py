"""Exception hierarchy shared across the toolkit."""


class SynthIpdError(Exception):
    """Base class for every error raised by synthipd."""


class EmptySliceError(SynthIpdError, ValueError):
    """A survival curve or model was requested for an empty set of records."""


class ConvergenceError(SynthIpdError, ArithmeticError):
    """Newton iteration for the Cox model failed to converge."""


class SvgParseError(SynthIpdError, ValueError):
    """An SVG figure could not be turned into a step curve."""


class DigitizationError(SynthIpdError, ValueError):
    """At-risk counts and the digitized curve cannot be reconciled."""


class ConfigError(SynthIpdError, ValueError):
    """A job, config or target file is missing a field or holds a bad value."""


class InfeasibleStartError(SynthIpdError):
    """No initial covariate assignment reached a finite hazard-ratio loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
