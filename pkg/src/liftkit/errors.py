"""Exception hierarchy.

Everything raised for bad *data* derives from :class:`LiftkitError`; the CLI
maps those to exit status 2. Programming errors (wrong types etc.) are left
as the usual built-in exceptions.
"""


class LiftkitError(Exception):
    """Base class for data and validation failures."""


class ParseError(LiftkitError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(LiftkitError):
    pass


class TimeOrderError(LiftkitError):
    pass


class OutOfRangeError(LiftkitError):
    pass


class LabelError(LiftkitError):
    pass


class LabelConflictError(LabelError):
    pass


class DegenerateSignalError(LiftkitError):
    pass


class SensorMissingError(LiftkitError):
    pass


class NotStillError(LiftkitError):
    pass


class EmptyDatasetError(LiftkitError):
    pass


class ClassMissingError(LiftkitError):
    pass


class SplitError(LiftkitError):
    pass


class NormError(LiftkitError):
    pass


class FilterError(LiftkitError):
    """A filter step failed; ``frame`` is the offending sample index when known."""

    def __init__(self, message, frame=None):
        self.frame = frame
        if frame is not None:
            message = f"frame {frame}: {message}"
        super().__init__(message)


class FreefallError(FilterError):
    pass


class SingularUpdateError(FilterError):
    pass


class ShapeError(LiftkitError):
    pass


class InputError(LiftkitError):
    pass


class DivergenceError(LiftkitError):
    def __init__(self, epoch):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite in epoch {epoch}")


class SpecError(LiftkitError):
    pass


class ConfigError(LiftkitError):
    pass
