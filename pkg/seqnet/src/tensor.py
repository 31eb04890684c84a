# File: seqnet/src/tensor.py
# Dense tensors and the gradient tape that records operations for reverse-mode differentiation

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from seqnet.src import runtime
from seqnet.src.errors import InvalidArgumentError, InvalidStateError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_local = threading.local()


def _tape_stack() -> List["Tape"]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def _counter_stack() -> List["MacCounter"]:
    if not hasattr(_local, "counters"):
        _local.counters = []
    return _local.counters


class Tensor:
    """N-dimensional float array that can take part in a gradient tape.

    Leaves created by the user keep their gradient in ``grad``. Tensors produced
    by recorded operations belong to the tape that recorded them; their
    gradients only live inside ``Tape.backward``.
    """

    __slots__ = ("data", "requires_grad", "name", "_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        array = np.array(data, dtype=dtype or runtime.dtype(), copy=True)
        if any(extent <= 0 for extent in array.shape):
            raise InvalidArgumentError(f"tensor.Tensor.__init__: extents must be positive, got shape {array.shape}")
        self.data = np.ascontiguousarray(array)
        self.requires_grad = requires_grad
        self.name = name
        self._grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False, name: Optional[str] = None) -> "Tensor":
        """Adopt an existing array without copying or casting it."""
        tensor = cls.__new__(cls)
        tensor.data = np.ascontiguousarray(array)
        tensor.requires_grad = requires_grad
        tensor.name = name
        tensor._grad = None
        tensor._tape = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def grad(self) -> Optional[np.ndarray]:
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        if self.requires_grad:
            self._grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"


@dataclass
class TapeEntry:
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of differentiable operations executed while the tape is active."""

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn) -> None:
        if self.consumed:
            raise InvalidStateError("tensor.Tape.record: tape already replayed")
        output.requires_grad = True
        output._tape = self
        self.entries.append(TapeEntry(tuple(inputs), output, backward))

    def backward(self, loss: Tensor, seed: Optional[np.ndarray] = None) -> None:
        """Replay recorded operations in reverse, accumulating into leaf ``grad`` buffers."""
        if loss._tape is not self:
            raise InvalidStateError("tensor.Tape.backward: loss was not produced on this tape")
        if self.consumed:
            raise InvalidStateError("tensor.Tape.backward: tape already replayed")
        if seed is None:
            if loss.size != 1:
                raise InvalidStateError(
                    f"tensor.Tape.backward: loss must be scalar without a seed gradient, got shape {loss.shape}"
                )
            seed = np.ones_like(loss.data)

        pending = {id(loss): np.asarray(seed, dtype=loss.dtype)}
        for entry in reversed(self.entries):
            upstream = pending.pop(id(entry.output), None)
            if upstream is None:
                continue
            input_grads = entry.backward(upstream)
            for tensor, grad in zip(entry.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor._tape is self:
                    key = id(tensor)
                    if key in pending:
                        pending[key] = pending[key] + grad
                    else:
                        pending[key] = grad
                else:
                    tensor.grad[...] += grad
        self.consumed = True
        self.entries.clear()


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(loss: Tensor) -> None:
    """Differentiate ``loss`` through the tape that produced it."""
    if loss._tape is None:
        raise InvalidStateError("tensor.backward: tensor is not on an active tape")
    loss._tape.backward(loss)


def make_result(array: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op output and record it when a tape is active and any input needs gradients."""
    out = Tensor.wrap(array)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(inputs, out, backward_fn)
    return out


# --- Multiply-accumulate counting ---


class MacCounter:
    """Accumulates multiply-accumulate operations reported by conv2d and linear."""

    def __init__(self):
        self.total = 0
        self.by_op = {"conv2d": 0, "linear": 0}

    def add(self, op: str, count: int) -> None:
        self.total += int(count)
        self.by_op[op] = self.by_op.get(op, 0) + int(count)


@contextmanager
def mac_counter() -> Iterator[MacCounter]:
    counter = MacCounter()
    stack = _counter_stack()
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.remove(counter)


def report_macs(op: str, count: int) -> None:
    for counter in _counter_stack():
        counter.add(op, count)
