"""Exception types shared across the toolkit."""


class TcadetError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(TcadetError):
    """Operand shapes do not conform."""


class NumericsError(TcadetError):
    """An operation produced NaN or Inf."""


class DegenerateBatchError(TcadetError):
    """Batch statistics requested on a batch too small to define them."""


class ConfigError(TcadetError):
    """Invalid configuration or hyperparameter value."""


class UsageError(TcadetError):
    """API misuse: bad argument combination, wrong label set, non-scalar loss."""


class FormatError(TcadetError):
    """Malformed binary file. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ParseError(TcadetError):
    """Malformed text file. Carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CheckpointError(TcadetError):
    """Checkpoint file cannot be loaded."""
