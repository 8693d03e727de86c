"""Tape-based reverse-mode autodiff on numpy arrays.

A Tensor wraps an ndarray. While a Tape is active, differentiable ops
append nodes to it; ``backward`` replays the nodes in exact reverse
recording order and accumulates gradients for every tensor that
requires them. Without an active tape, ops are plain numpy calls.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from mmtp.errors import ShapeError


# Training runs in single precision; gradient checks flip the engine to
# float64 because finite-difference tolerances below ~1e-3 are not
# reachable in float32.
_FLOAT = {"single": np.float32, "extended": np.float64}
_state = threading.local()


def _st():
    if not hasattr(_state, "precision"):
        _state.precision = "single"
        _state.tapes = []
        _state.rng = np.random.default_rng(0)
    return _state


def active_dtype():
    """The dtype new tensors are created with."""
    return _FLOAT[_st().precision]


def set_precision(mode: str) -> None:
    """Switch the engine between 'single' and 'extended' precision."""
    if mode not in _FLOAT:
        raise ValueError(f"unknown precision mode {mode!r}")
    _st().precision = mode


@contextlib.contextmanager
def extended_precision():
    """Run the enclosed block with float64 tensors (for gradient checks)."""
    st = _st()
    prev = st.precision
    st.precision = "extended"
    try:
        yield
    finally:
        st.precision = prev


def seed(n: int) -> None:
    """Seed the engine-owned generator that all stochastic ops draw from."""
    _st().rng = np.random.default_rng(n)


def generator() -> np.random.Generator:
    """The engine-owned random generator."""
    return _st().rng


class Tensor:
    """N-dimensional float array, optionally tracked on the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "_tracked")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype != active_dtype():
            arr = arr.astype(active_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        # True once this tensor participates in a recorded op chain.
        self._tracked = requires_grad

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

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """A view of the same data cut off from the tape."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar delegates to the ops module (imported lazily to
    # avoid a cycle).
    def __add__(self, other):
        from mmtp.engine import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from mmtp.engine import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from mmtp.engine import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from mmtp.engine import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from mmtp.engine import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from mmtp.engine import ops

        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of differentiable ops, replayed in reverse by backward.

    Inputs of every node precede the node itself (ops record at creation
    time), so a single reverse sweep is a valid topological order.
    """

    def __init__(self):
        self._nodes = []  # (output, inputs, backward_fn)

    def __len__(self):
        return len(self._nodes)

    def __enter__(self):
        _st().tapes.append(self)
        return self

    def __exit__(self, *exc):
        popped = _st().tapes.pop()
        assert popped is self
        return False

    def record(self, out, inputs: tuple, backward_fn) -> None:
        """backward_fn(out_grad) -> per-input gradient arrays (None to skip).

        ``out`` may be a tuple of tensors for multi-output ops, in which
        case backward_fn receives a tuple of output gradients.
        """
        if isinstance(out, tuple):
            for o in out:
                o._tracked = True
        else:
            out._tracked = True
        self._nodes.append((out, inputs, backward_fn))


def active_tape() -> Tape | None:
    tapes = _st().tapes
    return tapes[-1] if tapes else None


def recording_for(*tensors) -> Tape | None:
    """The active tape, if any given tensor participates in gradients."""
    tape = active_tape()
    if tape is None:
        return None
    for t in tensors:
        if isinstance(t, Tensor) and t._tracked:
            return tape
    return None


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every requires_grad tensor.

    Traverses the tape in exact reverse recording order; running the same
    tape twice from the same state is bit-identical.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tensors: dict[int, Tensor] = {id(loss): loss}
    owned: set[int] = set()  # accumulation buffers private to this sweep
    for out, inputs, backward_fn in reversed(tape._nodes):
        if isinstance(out, tuple):
            gs = [grads.get(id(o)) for o in out]
            if all(g is None for g in gs):
                continue
            gs = [np.zeros_like(o.data) if g is None else g for g, o in zip(gs, out)]
            in_grads = backward_fn(tuple(gs))
        else:
            g = grads.get(id(out))
            if g is None:
                continue
            in_grads = backward_fn(g)
        for t, ig in zip(inputs, in_grads):
            if ig is None or not isinstance(t, Tensor) or not t._tracked:
                continue
            key = id(t)
            if key not in grads:
                grads[key] = ig
                tensors[key] = t
            elif key in owned:
                grads[key] += ig
            else:
                grads[key] = grads[key] + ig
                owned.add(key)
    for key, t in tensors.items():
        if t.requires_grad:
            g = grads[key]
            if t.grad is None:
                t.grad = g
            else:
                t.grad = t.grad + g


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad
