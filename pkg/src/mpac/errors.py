"""Exception types shared across the package."""


class MpacError(Exception):
    """Base class for all package errors."""


class InvalidArgument(MpacError, ValueError):
    """An argument violates a documented precondition."""


class InvalidState(MpacError, RuntimeError):
    """An object is in a state that forbids the requested operation."""


class ConfigError(MpacError, ValueError):
    """A run configuration is malformed. ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class DemoParseError(MpacError, ValueError):
    """A demonstration file could not be parsed."""

    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
