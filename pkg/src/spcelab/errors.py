"""Exception types shared across the package."""


class DomainError(ValueError):
    """A precondition on an operation's arguments was violated."""


class FormatError(ValueError):
    """A serialized input (JSONL, config) failed to parse.

    Carries the 1-based line number of the offending record when known.
    """

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class ConfigError(ValueError):
    """A CLI configuration document failed schema validation."""
