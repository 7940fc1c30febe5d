"""Exception types shared across the package; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Invalid run configuration or infeasible data request."""


class FormatError(ValueError):
    """Malformed dataset or bundle file."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class NumericError(FloatingPointError):
    """A training loss became non-finite."""
