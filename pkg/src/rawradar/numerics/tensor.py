"""Tensor type and the recording tape behind reverse-mode differentiation.

A :class:`Tensor` wraps an immutable numpy array.  Operations on tensors are
recorded only while a :class:`Tape` is active *and* at least one operand is
tracked (a trainable leaf, or the output of an earlier recorded operation).
Outside a tape every operation is a plain numpy computation.

Complex gradients follow the "independent parts" convention: for a real loss
``L`` and a complex tensor ``w = a + jb`` the stored gradient is
``dL/da + j dL/db``.  A plain descent step on ``(a, b)`` therefore reads
``w -= lr * grad``.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, ShapeError

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; a tape belongs to a single thread and a single
    training step.

    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    >>> (dw,) = grad(loss, [w])
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple, Callable]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().remove(self)

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, out: "Tensor", inputs: tuple, backward: Callable) -> None:
        out._tape = self
        self.entries.append((out, inputs, backward))

    def reset(self) -> None:
        for out, _, _ in self.entries:
            out._tape = None
        self.entries = []
        self.consumed = True


class Tensor:
    """Dense real64/complex128 array with an optional tape handle.

    Parameters
    ----------
    data : array_like
        Values.  Integers and booleans are promoted to float64; float32 is kept
        as is (inference-only precision).
    requires_grad : bool
        Mark the tensor as a trainable leaf.
    name : str, optional
        Used in error messages and checkpoints.
    """

    __slots__ = ("data", "requires_grad", "name", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind in "biu":
            arr = arr.astype(np.float64)
        elif arr.dtype.kind == "f" and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        elif arr.dtype.kind == "c" and arr.dtype not in (np.complex64, np.complex128):
            arr = arr.astype(np.complex128)
        elif arr.dtype.kind not in "fc":
            raise ContractError(f"unsupported dtype {arr.dtype}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._tape: Tape | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_complex(self) -> bool:
        return self.data.dtype.kind == "c"

    @property
    def tracked(self) -> bool:
        """True when operations on this tensor are being recorded."""
        tape = active_tape()
        if tape is None:
            return False
        return self.requires_grad or self._tape is tape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self):
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar; implementations live in ops -------------------
    def __add__(self, other):
        return ops.add(self, other)

    def __radd__(self, other):
        return ops.add(other, self)

    def __sub__(self, other):
        return ops.sub(self, other)

    def __rsub__(self, other):
        return ops.sub(other, self)

    def __mul__(self, other):
        return ops.mul(self, other)

    def __rmul__(self, other):
        return ops.mul(other, self)

    def __truediv__(self, other):
        return ops.div(self, other)

    def __rtruediv__(self, other):
        return ops.div(other, self)

    def __neg__(self):
        return ops.neg(self)

    def __pow__(self, p):
        return ops.power(self, p)

    def __matmul__(self, other):
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        return ops.matmul(other, self)

    def __getitem__(self, index):
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def real(self):
        return ops.real(self)

    @property
    def imag(self):
        return ops.imag(self)

    def conj(self):
        return ops.conj(self)

    def abs(self):
        return ops.absolute(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(out_data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``out_data`` in a tensor and record it if any input is tracked.

    ``backward(g)`` receives the output gradient and returns one gradient (or
    ``None``) per input.  This is the extension point for fused operations.
    """
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad or t._tape is tape for t in inputs):
        tape.record(out, tuple(inputs), backward)
    return out


def _accumulate(grads: dict, t: Tensor, g: np.ndarray) -> None:
    if g.dtype.kind == "c" and not t.is_complex:
        g = g.real
    if g.shape != t.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {t.shape}")
    key = id(t)
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g


def grad(loss: Tensor, params: Sequence[Tensor], retain: bool = False) -> list[np.ndarray]:
    """Gradients of a real scalar ``loss`` with respect to ``params``.

    The tape that produced ``loss`` is replayed in reverse and then reset,
    unless ``retain`` is set.  Parameters the loss does not depend on get
    zero gradients.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    if loss.is_complex:
        raise ContractError("loss must be real-valued")
    tape = loss._tape
    if tape is None:
        raise ContractError("loss was not produced on an active tape")
    if tape.consumed:
        raise ContractError("tape has already been consumed")
    for p in params:
        if not (p.requires_grad or p._tape is tape):
            raise ContractError(f"parameter {p.name or p!r} is not attached to the tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, backward in reversed(tape.entries):
        g = grads.get(id(out))
        if g is None:
            continue
        in_grads = backward(g)
        for t, gi in zip(inputs, in_grads):
            if gi is None:
                continue
            if t.requires_grad or t._tape is tape:
                _accumulate(grads, t, gi)
    result = []
    for p in params:
        g = grads.get(id(p))
        result.append(np.zeros_like(p.data) if g is None else np.asarray(g))
    if not retain:
        tape.reset()
    return result


from . import ops  # noqa: E402  (circular: ops needs Tensor)
