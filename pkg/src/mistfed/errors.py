"""Exception hierarchy shared by all mistfed modules."""


class MistFedError(Exception):
    """Base class for every error raised by this package."""

    category = "runtime"


class ConfigurationError(MistFedError, ValueError):
    """Shapes, lengths or config values that cannot work together."""

    category = "config"


class UsageError(MistFedError, ValueError):
    """A caller violated an operation's precondition (empty batch, bad size)."""

    category = "usage"


class NumericError(MistFedError, ArithmeticError):
    """A non-finite value showed up where only finite reals are allowed."""

    category = "numeric"


class DataError(MistFedError, ValueError):
    category = "data"


class IngestionError(DataError):
    """CSV ingestion failed; ``rows`` holds offending 1-based line numbers."""

    category = "ingestion"

    def __init__(self, message: str, rows: list[int] | None = None):
        self.rows = list(rows or [])
        if self.rows:
            shown = ", ".join(str(r) for r in self.rows[:20])
            more = "" if len(self.rows) <= 20 else f" (+{len(self.rows) - 20} more)"
            message = f"{message} [rows: {shown}{more}]"
        super().__init__(message)


class ProtocolError(MistFedError, RuntimeError):
    category = "protocol"


class NoEligibleClientsError(ProtocolError):
    """Raised by the Edge when the threshold filter leaves nobody."""

    def __init__(self, message: str = "no eligible clients"):
        super().__init__(message)
