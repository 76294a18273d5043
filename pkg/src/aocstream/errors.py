"""Exception hierarchy shared by all modules."""


class AocStreamError(Exception):
    """Base class; the CLI maps these to exit code 2 (validation)."""


class ShapeMismatch(AocStreamError):
    pass


class CycleDetected(AocStreamError):
    pass


class UnsupportedSize(AocStreamError):
    pass


class ParseError(AocStreamError):
    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class NonIntegralPEs(AocStreamError):
    pass


class Infeasible(AocStreamError):
    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class AccumulatorOverflow(AocStreamError):
    pass


class StreamOrderViolation(AocStreamError):
    pass


class Deadlock(AocStreamError):
    def __init__(self, message, wait_set=()):
        super().__init__(message)
        self.wait_set = tuple(wait_set)


class LineBufferViolation(AocStreamError):
    """A window read data the line buffer no longer (or never) held."""
