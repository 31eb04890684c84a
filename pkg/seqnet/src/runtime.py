# File: seqnet/src/runtime.py
# Process-wide numeric settings: default precision, worker threads and deterministic mode

import os
import threading
from contextlib import contextmanager
from typing import Iterator

import numpy as np

from seqnet.src.errors import InvalidArgumentError

# --- Configuration ---
PRECISIONS = {"single": np.float32, "double": np.float64}

_lock = threading.Lock()
_state = {
    "precision": "single",
    "threads": max(1, int(os.environ.get("SEQCONV_THREADS", "1") or 1)),
    "deterministic": True,
}


def set_precision(name: str) -> None:
    if name not in PRECISIONS:
        raise InvalidArgumentError(
            f"runtime.set_precision: unknown precision '{name}', expected one of {sorted(PRECISIONS)}"
        )
    with _lock:
        _state["precision"] = name


def precision() -> str:
    return _state["precision"]


def dtype() -> type:
    """Floating dtype new tensors are created with."""
    return PRECISIONS[_state["precision"]]


def set_threads(count: int) -> None:
    if count < 1:
        raise InvalidArgumentError(f"runtime.set_threads: thread count must be >= 1, got {count}")
    with _lock:
        _state["threads"] = count


def threads() -> int:
    return _state["threads"]


def set_deterministic(flag: bool) -> None:
    with _lock:
        _state["deterministic"] = bool(flag)


def deterministic() -> bool:
    return _state["deterministic"]


def parallel_enabled() -> bool:
    return _state["threads"] > 1 and not _state["deterministic"]


@contextmanager
def settings(precision: str = None, threads: int = None, deterministic: bool = None) -> Iterator[None]:
    """Temporarily override runtime settings (used by gradient checks and tests)."""
    saved = dict(_state)
    try:
        if precision is not None:
            set_precision(precision)
        if threads is not None:
            set_threads(threads)
        if deterministic is not None:
            set_deterministic(deterministic)
        yield
    finally:
        with _lock:
            _state.update(saved)
