"""Exception types raised across the package.

The CLI maps :class:`ValidationError` (and subclasses) to exit status 1 and
``OSError`` to exit status 2.
"""


class PathKGError(Exception):
    pass


class ValidationError(PathKGError):
    """Input data or arguments violate a documented precondition."""


class ParseError(ValidationError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class ConfigError(ValidationError):
    pass


class IncompatibleCheckpointError(ValidationError):
    pass


class NegativeSamplingError(PathKGError):
    def __init__(self, triple, attempts):
        self.triple = triple
        self.attempts = attempts
        super().__init__(f"could not sample a negative for triple {triple} after {attempts} attempts")


class NonFiniteLossError(PathKGError):
    def __init__(self, epoch, batch_index, first_triple, value):
        self.epoch = epoch
        self.batch_index = batch_index
        self.first_triple = first_triple
        self.value = value
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, batch {batch_index} "
            f"(first positive {first_triple})"
        )
