"""Dense tensors and the reverse-mode tape.

A :class:`Tensor` wraps a C-contiguous numpy buffer.  Operations executed
while a :class:`Tape` is active are recorded on it whenever at least one
input is tracked (a ``requires_grad`` leaf or the output of an earlier
recorded op).  :func:`backward` walks the tape in reverse and accumulates
gradients in fixed tape order, so repeated runs are bit-identical.

Numeric precision is a process-wide mode rather than a per-tensor property:
``"fp32"`` for training, ``"fp64"`` for finite-difference checks.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import NotScalarLoss, PrecisionError, ShapeMismatch

_MODES = {"fp32": np.float32, "fp64": np.float64}
_state = threading.local()
_dtype = np.float32


def set_precision(mode: str) -> None:
    global _dtype
    if mode not in _MODES:
        raise PrecisionError(f"unknown precision mode {mode!r}; expected fp32 or fp64")
    _dtype = _MODES[mode]


def get_precision() -> str:
    return "fp64" if _dtype == np.float64 else "fp32"


def default_dtype():
    return _dtype


@contextlib.contextmanager
def precision(mode: str):
    previous = get_precision()
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(previous)


class Tensor:
    """Row-major dense array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "node", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _dtype, order="C", copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(n < 1 for n in arr.shape):
            raise ShapeMismatch(f"all extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[int] = None
        self.requires_grad = requires_grad
        self._tape: Optional[Tape] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr)
        if t.data.ndim == 0:
            t.data = t.data.reshape(1)
        t.grad = None
        t.node = None
        t.requires_grad = False
        t._tape = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalarLoss(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # operator sugar; definitions live in ops to keep the primitive set in one place
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(*shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(*shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def full(shape, value, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(shape, value), requires_grad=requires_grad)


def identity(n: int) -> Tensor:
    return Tensor(np.eye(n))


@dataclass(frozen=True)
class TapeOp:
    name: str
    inputs: tuple  # node id per input, None for untracked constants
    output: int
    vjp: Callable  # upstream grad -> tuple of input grads (None allowed)


class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; nested tapes shadow outer ones.
    """

    def __init__(self):
        self.ops: list[TapeOp] = []
        self.leaves: dict[int, Tensor] = {}
        self._next = 0

    def __enter__(self):
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def _new_id(self) -> int:
        self._next += 1
        return self._next - 1

    def node_of(self, t: Tensor) -> Optional[int]:
        if t._tape is self:
            return t.node
        if t.requires_grad:
            t.node = self._new_id()
            t._tape = self
            self.leaves[t.node] = t
            return t.node
        return None

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            t.requires_grad = True
            self.node_of(t)

    def record(self, name: str, out: Tensor, inputs: Sequence[Tensor], vjp) -> Tensor:
        ids = tuple(self.node_of(t) for t in inputs)
        if all(i is None for i in ids):
            return out
        out.node = self._new_id()
        out._tape = self
        self.ops.append(TapeOp(name, ids, out.node, vjp))
        return out

    def grad_of(self, t: Tensor, grads: dict) -> np.ndarray:
        if t._tape is self and t.node in grads:
            return grads[t.node]
        return np.zeros_like(t.data)


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def record(name: str, out_data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap ``out_data`` and record it on the active tape, if any."""
    out = Tensor._wrap(out_data)
    tape = active_tape()
    if tape is not None:
        tape.record(name, out, inputs, vjp)
    return out


@contextlib.contextmanager
def no_record():
    """Run ops without recording, even inside an active tape."""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def backward(tape: Tape, loss: Tensor) -> dict:
    """Reverse accumulation from ``loss``.

    Returns a map node id -> gradient array and fills ``.grad`` on every
    leaf the tape knows about (zeros for leaves with no path to the loss).
    A loss that never touched a tracked tensor yields all-zero gradients.
    """
    if loss.size != 1:
        raise NotScalarLoss(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss._tape is tape and loss.node is not None:
        grads[loss.node] = np.ones_like(loss.data)
        for op in reversed(tape.ops):
            g = grads.get(op.output)
            if g is None:
                continue
            in_grads = op.vjp(g)
            for node, gi in zip(op.inputs, in_grads):
                if node is None or gi is None:
                    continue
                if node in grads:
                    grads[node] = grads[node] + gi
                else:
                    grads[node] = gi
    for node, leaf in tape.leaves.items():
        g = grads.get(node)
        leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
    return grads


def gradients(loss_fn: Callable[[], Tensor], params: Iterable[Tensor]) -> tuple[Tensor, list]:
    """Convenience: record ``loss_fn()`` on a fresh tape and return (loss, grads)."""
    params = list(params)
    with Tape() as tape:
        tape.watch(*params)
        loss = loss_fn()
    backward(tape, loss)
    return loss, [p.grad for p in params]
