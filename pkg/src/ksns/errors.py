class ConfigError(ValueError):
    """Invalid configuration or precondition violation.

    ``field`` is the dotted config path when the error comes from a run
    configuration, ``line`` the 1-based source line when known.
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        prefix = ""
        if field is not None:
            prefix = f"{field}: "
        if line is not None:
            prefix = f"line {line}: " + prefix
        super().__init__(prefix + message)


class ContractError(ValueError):
    """An input violated an operation's documented contract."""


class StreamError(RuntimeError):
    """A Wiener increment stream is exhausted or its state is invalid."""
