"""Dense tensor with a reverse-mode autodiff tape.

Values live in contiguous row-major numpy buffers (f32 for training, f64
for gradient checking). Every differentiable primitive records one tape
node; backward() replays the tape in exact reverse execution order.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to an op's signature."""


class NumericError(ArithmeticError):
    """An op produced NaN/Inf from finite inputs."""


class TapeError(RuntimeError):
    """Backward invoked without a usable tape / loss."""


class Tensor:
    """A numpy-backed array that can participate in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._item_err()

    def _item_err(self):
        raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if g.shape != self.data.shape:
            raise ShapeError(f"grad shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # Arithmetic sugar delegates to ops (imported lazily to avoid a cycle).
    def __add__(self, other):
        from . import ops
        return ops.add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        from . import ops
        return ops.add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _wrap(other, self.dtype))

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        from . import ops
        return ops.mul(_wrap(other, self.dtype), self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _wrap(x, dtype):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


class _TapeNode:
    __slots__ = ("inputs", "outputs", "backward_fn", "name")

    def __init__(self, inputs, outputs, backward_fn, name):
        self.inputs = inputs
        self.outputs = outputs
        self.backward_fn = backward_fn
        self.name = name


class Tape:
    """Ordered record of executed ops, replayed in reverse by backward()."""

    def __init__(self):
        self.nodes = []

    def record(self, node):
        self.nodes.append(node)

    def clear(self):
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


class _State(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.grad_enabled = True
        self.check_finite = False


_state = _State()


def get_tape():
    return _state.tape


def grad_enabled():
    return _state.grad_enabled


@contextlib.contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def set_finite_checks(on):
    """Toggle per-op NaN/Inf detection (off by default in the hot path)."""
    prev = _state.check_finite
    _state.check_finite = bool(on)
    return prev


def finite_checks_enabled():
    return _state.check_finite


def record_op(name, inputs, outputs, backward_fn):
    """Append one op to the active tape if any input wants gradients."""
    if _state.check_finite:
        for out in outputs:
            if not np.all(np.isfinite(out.data)):
                raise NumericError(f"op '{name}' produced non-finite values")
    if _state.grad_enabled and any(t.requires_grad for t in inputs):
        for out in outputs:
            out.requires_grad = True
        _state.tape.record(_TapeNode(inputs, outputs, backward_fn, name))


def backward(loss):
    """Populate .grad for every requires_grad tensor reachable from loss.

    The tape is consumed: replay happens in exact reverse execution order
    and the tape is cleared afterwards.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor loss")
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    if not loss.requires_grad or not tape.nodes:
        raise TapeError("loss was not produced under an active tape")

    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        grads_out = [o.grad for o in node.outputs]
        if all(g is None for g in grads_out):
            continue
        grads_out = [
            g if g is not None else np.zeros_like(o.data)
            for g, o in zip(grads_out, node.outputs)
        ]
        grads_in = node.backward_fn(*grads_out)
        if not isinstance(grads_in, (tuple, list)):
            grads_in = (grads_in,)
        if len(grads_in) != len(node.inputs):
            raise RuntimeError(f"op '{node.name}' returned {len(grads_in)} grads for {len(node.inputs)} inputs")
        for t, g in zip(node.inputs, grads_in):
            if g is None:
                continue
            t.accumulate_grad(np.asarray(g))
    tape.clear()
