"""Exception hierarchy shared by every stage of the pipeline."""


class KWSError(Exception):
    """Base class for all errors raised by stkws."""


class ValidationError(KWSError, ValueError):
    """Input data failed a precondition (non-finite samples, bad labels, ...)."""


class RangeError(ValidationError):
    """A numeric argument lies outside its admissible range."""


class ShapeError(KWSError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(KWSError):
    """A configuration, variant name or dataset layout is invalid."""


class UndefinedCurveError(KWSError, ValueError):
    """An ROC curve cannot be formed (no positives or no negatives)."""


class NonFiniteGradientError(KWSError, FloatingPointError):
    """A gradient contained NaN or inf; carries the offending parameter."""

    def __init__(self, parameter, batch=None):
        self.parameter = parameter
        self.batch = batch
        where = f" (batch {batch})" if batch is not None else ""
        super().__init__(f"non-finite gradient in {parameter!r}{where}")
