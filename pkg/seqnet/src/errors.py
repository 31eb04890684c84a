# File: seqnet/src/errors.py
# Exception hierarchy shared by the library, services and CLI

from typing import Optional

# --- CLI exit codes ---
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class SeqNetError(Exception):
    """Base class for every error raised by seqnet."""

    exit_code = EXIT_CONFIG


class InvalidArgumentError(SeqNetError, ValueError):
    """Shape, divisibility or range violation in a call argument."""


class InvalidStateError(SeqNetError, RuntimeError):
    """Operation called while an object is not ready for it."""


class ConfigError(SeqNetError):
    """A run config failed to parse or validate."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DataError(SeqNetError):
    """Dataset files missing or unusable."""

    exit_code = EXIT_DATA


class CorruptFileError(DataError):
    """Binary file whose layout does not match its declared format."""

    def __init__(self, message: str, path: Optional[str] = None, offset: Optional[int] = None):
        self.path = path
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class DegenerateChannelError(DataError):
    """A channel has zero standard deviation and cannot be normalized."""


class NumericError(SeqNetError):
    """Non-finite value produced during training or gradient checking."""

    exit_code = EXIT_NUMERIC
