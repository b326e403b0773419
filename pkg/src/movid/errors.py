"""Exception types shared across the package."""


class MovidError(Exception):
    pass


class ShapeMismatch(MovidError, ValueError):
    pass


class NonPositiveDepth(MovidError, ValueError):
    pass


class DegenerateBatch(MovidError, ValueError):
    pass


class NonNormalizedInput(MovidError, ValueError):
    pass


class DegenerateConfiguration(MovidError, ValueError):
    pass


class TooShort(MovidError, ValueError):
    pass


class EmptyPrototypes(MovidError, ValueError):
    pass


class InsufficientViews(MovidError, ValueError):
    pass


class NaNLoss(MovidError, FloatingPointError):
    def __init__(self, step: int, message: str = ""):
        super().__init__(f"non-finite loss at step {step}" + (f": {message}" if message else ""))
        self.step = step


class ConfigParseError(MovidError, ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = ""
        if key is not None:
            where += f" key {key!r}"
        if line is not None:
            where += f" (line {line})"
        super().__init__(message + where)
        self.key = key
        self.line = line


class CheckpointShapeMismatch(MovidError, ValueError):
    pass
