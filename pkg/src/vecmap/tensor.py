"""Minimal reverse-mode autodiff on numpy arrays.

A Tensor wraps an ndarray; a Tape records every differentiable op applied
while it is active and replays the chain in reverse on ``backward``.
Gradients accumulate into ``.grad`` so several backward passes (one per
scene in a batch) can sum into the same parameters before an optimizer
step.  Tapes are single-writer: the active tape is thread-local, nesting
is rejected, and a consumed tape refuses a second replay until ``reset``.
"""
from __future__ import annotations

import threading

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class TapeError(RuntimeError):
    """Tape misuse: nesting, replaying a consumed tape, bad loss shape."""


class ShapeError(ValueError):
    """Operand validation failure; the message carries the offending shapes."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        if dtype is not None and x.dtype != dtype:
            raise ShapeError(f"expected dtype {dtype}, got {x.dtype}")
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


_active = threading.local()


def current_tape():
    """The tape recording on this thread, or None."""
    return getattr(_active, "tape", None)


class Tape:
    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        if current_tape() is not None:
            raise TapeError("a tape is already active on this thread")
        if self._consumed:
            raise TapeError("tape already replayed; call reset() first")
        _active.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _active.tape = None
        return False

    def record(self, out: Tensor, inputs: tuple, backward) -> None:
        """Append one op: ``backward(grad_out) -> per-input grads or None``."""
        if self._consumed:
            raise TapeError("tape already replayed; call reset() first")
        self._nodes.append((out, inputs, backward))

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Reverse replay from ``loss``; accumulates into ``.grad``.

        The loss must be a scalar produced while this tape was recording.
        A second call without ``reset`` raises TapeError.
        """
        if self._consumed:
            raise TapeError("tape already replayed; call reset() first")
        self._consumed = True
        if loss.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        touched: dict[int, Tensor] = {}
        for out, inputs, fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = fn(g)
            for t, ig in zip(inputs, in_grads):
                if ig is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                touched[key] = t
        for key, t in touched.items():
            g = grads.get(key)
            if g is None:
                continue
            t.grad = g if t.grad is None else t.grad + g
        self._nodes = []

    def reset(self) -> None:
        self._nodes = []
        self._consumed = False


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)
