"""Reverse-mode automatic differentiation over numpy arrays.

The recording structure is a Wengert list: every primitive operation appends
one record, in execution order, to the active ``Tape``.  Execution order is a
topological order by construction, so ``backward`` is a single reverse sweep
over the records — no graph search, no recursion.

Conventions
-----------
- float32 is the working precision everywhere; float64 is available (pass
  ``dtype=np.float64`` when building tensors) so gradient checks can run with
  trustworthy finite differences.
- A ``Tape`` has a single writer: one thread records ops and runs the reverse
  sweep.  Distinct tapes over disjoint tensors are independent.
- Gradients accumulate into ``Tensor.grad``; zeroing between optimizer steps
  is the caller's job (see ``zero_grads``).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import ContractError, NumericError, UnknownNodeError

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """A dense float array plus an optional gradient buffer.

    Parameters
    ----------
    data : array-like
        Values; copied/cast as needed.  Float inputs keep their precision,
        everything else is cast to float32.
    requires_grad : bool
        True for trainable parameters: their ``grad`` survives the reverse
        sweep, and optimizers read it.
    dtype : numpy dtype, optional
        Force a specific float dtype (float32 or float64).
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES:
            arr = data  # float arrays keep their precision
        else:
            arr = np.asarray(data, dtype=DEFAULT_DTYPE)  # lists, scalars, ints
        if arr.dtype not in _FLOAT_DTYPES:
            raise ContractError(f"tensors are float32/float64 only, got {arr.dtype}")
        self.data = np.ascontiguousarray(arr)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"


@dataclass
class TapeRecord:
    """One recorded primitive: inputs, output, and the backward rule.

    ``backward_fn(dout, needs)`` returns one gradient array per input (None
    where ``needs`` is False).  Returned arrays may be views; the engine never
    writes into them.
    """

    op: str
    inputs: tuple
    output: "Tensor"
    backward_fn: Callable
    needs: tuple


class Tape:
    """Ordered record of primitive ops, used as a context manager.

    While active (``with tape: ...``) every primitive op appends a record.
    Records are in execution order, which is a topological order of the
    dataflow, so one reversed pass propagates all gradients.
    """

    def __init__(self):
        self.records: list[TapeRecord] = []
        self._produced: set[int] = set()

    def __len__(self) -> int:
        return len(self.records)

    def produced(self, t: Tensor) -> bool:
        """Whether this tape recorded the op that created ``t``."""
        return id(t) in self._produced

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _stack().pop()
        assert popped is self, "tape context exited out of order"


_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def current_tape() -> Optional[Tape]:
    """The innermost active tape on this thread, or None."""
    stack = _stack()
    return stack[-1] if stack else None


# ---------------------------------------------------------------------------
# debug-mode finite checks

_debug = threading.local()


def debug_checks_enabled() -> bool:
    return getattr(_debug, "enabled", True)


def set_debug_checks(enabled: bool) -> bool:
    """Toggle NaN/Inf scanning of op outputs; returns the previous setting."""
    prev = debug_checks_enabled()
    _debug.enabled = bool(enabled)
    return prev


@contextmanager
def debug_checks(enabled: bool):
    prev = set_debug_checks(enabled)
    try:
        yield
    finally:
        set_debug_checks(prev)


def check_finite(op: str, arr: np.ndarray) -> None:
    """Raise NumericError if ``arr`` holds NaN/Inf (debug mode only)."""
    if debug_checks_enabled() and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in output of {op}")


# ---------------------------------------------------------------------------
# reverse sweep


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/dX into X.grad for every tensor reachable from loss.

    ``loss`` must be a scalar produced on ``tape``.  Gradient buffers of
    non-parameter intermediates are freed as soon as their record has been
    consumed; parameter gradients (requires_grad tensors) persist until the
    caller zeroes them.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.produced(loss):
        raise UnknownNodeError("loss tensor was not produced on this tape")

    loss.grad = np.ones_like(loss.data)
    for rec in reversed(tape.records):
        dout = rec.output.grad
        if dout is None:
            continue  # this output never fed the loss
        grads = rec.backward_fn(dout, rec.needs)
        for t, g, need in zip(rec.inputs, grads, rec.needs):
            if not need:
                continue
            if g is None:
                raise ContractError(f"op {rec.op} returned no gradient for a needed input")
            # never write in place: g may be a view of another grad buffer
            t.grad = g if t.grad is None else t.grad + g
        if not rec.output.requires_grad:
            rec.output.grad = None  # free the intermediate


def zero_grads(params) -> None:
    """Drop gradient buffers of an iterable (or dict) of tensors."""
    values = params.values() if isinstance(params, dict) else params
    for t in values:
        t.grad = None
