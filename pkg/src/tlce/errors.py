"""Exception hierarchy. Each family maps to a CLI exit code."""


class TLCEError(Exception):
    exit_code = 1


class ConfigError(TLCEError):
    exit_code = 2


class DimensionError(TLCEError, ValueError):
    exit_code = 3


class DegenerateInputError(TLCEError, ValueError):
    """A zero-norm vector reached an operation that needs a direction."""

    exit_code = 3


class DataError(TLCEError):
    exit_code = 3


class InfeasibleError(DataError):
    pass


class FormatError(DataError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ProtocolError(TLCEError):
    exit_code = 4


class DependencyError(ProtocolError):
    """A training stage was requested before the stage it builds on."""


class ContractError(TLCEError, RuntimeError):
    pass
