"""Differentiable operations on Tensors.

Every op computes its result eagerly with numpy and, when a tape is
active and some input is gradient-tracked, records a backward rule.
Backward rules return one gradient array per input (None for inputs
that never need gradients, e.g. masks).
"""

from __future__ import annotations

import numpy as np

from mmtp.engine.tensor import (
    Tensor,
    as_tensor,
    recording_for,
    unbroadcast,
    generator,
)
from mmtp.errors import DegenerateRowError, ShapeError


# ---------------------------------------------------------------------------
# broadcast binary ops
# ---------------------------------------------------------------------------

def _broadcast_check(a, b, opname):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    out = Tensor(a.data + b.data)
    tape = recording_for(a, b)
    if tape is not None:
        na, nb = a._tracked, b._tracked
        tape.record(out, (a, b),
                    lambda g: (unbroadcast(g, a.shape) if na else None,
                               unbroadcast(g, b.shape) if nb else None))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    out = Tensor(a.data - b.data)
    tape = recording_for(a, b)
    if tape is not None:
        na, nb = a._tracked, b._tracked
        tape.record(out, (a, b),
                    lambda g: (unbroadcast(g, a.shape) if na else None,
                               unbroadcast(-g, b.shape) if nb else None))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    out = Tensor(a.data * b.data)
    tape = recording_for(a, b)
    if tape is not None:
        ad, bd = a.data, b.data
        na, nb = a._tracked, b._tracked
        tape.record(out, (a, b),
                    lambda g: (unbroadcast(g * bd, a.shape) if na else None,
                               unbroadcast(g * ad, b.shape) if nb else None))
    return out


def scale(x, s: float) -> Tensor:
    x = as_tensor(x)
    s = float(s)
    out = Tensor(x.data * s)
    tape = recording_for(x)
    if tape is not None:
        tape.record(out, (x,), lambda g: (g * s,))
    return out


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def _unary(x, out_data, local_grad) -> Tensor:
    out = Tensor(out_data)
    tape = recording_for(x)
    if tape is not None:
        tape.record(out, (x,), lambda g: (g * local_grad,))
    return out


def exp(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)
    return _unary(x, e, e)


def log(x, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` set, the argument is clamped from below."""
    x = as_tensor(x)
    xd = np.maximum(x.data, floor) if floor is not None else x.data
    return _unary(x, np.log(xd), 1.0 / xd)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _unary(x, t, 1.0 - t * t)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    s = np.empty_like(xd)
    pos = xd >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    s[~pos] = ex / (1.0 + ex)
    return _unary(x, s, s * (1.0 - s))


def elu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    neg = np.exp(np.minimum(xd, 0.0)) - 1.0
    out = np.where(xd > 0, xd, neg)
    local = np.where(xd > 0, np.ones_like(xd), neg + 1.0)
    return _unary(x, out, local)


def huber(x) -> Tensor:
    """Elementwise smooth-L1 with transition point 1: 0.5x^2 inside, |x|-0.5 out."""
    x = as_tensor(x)
    xd = x.data
    a = np.abs(xd)
    out = np.where(a < 1.0, 0.5 * xd * xd, a - 0.5)
    return _unary(x, out, np.clip(xd, -1.0, 1.0))


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch extents do not broadcast: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    tape = recording_for(a, b)
    if tape is not None:
        ad, bd = a.data, b.data
        need_a, need_b = a._tracked, b._tracked

        def bwd(g):
            ga = gb = None
            if need_a:
                ga = g @ bd.swapaxes(-1, -2)
                if ga.shape != ad.shape:
                    ga = unbroadcast(ga, ad.shape)
            if need_b:
                if bd.ndim == 2:
                    # weight on the right: one flattened GEMM instead of a
                    # batched product followed by a huge reduction
                    gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
                else:
                    gb = ad.swapaxes(-1, -2) @ g
                    if gb.shape != bd.shape:
                        gb = unbroadcast(gb, bd.shape)
            return ga, gb

        tape.record(out, (a, b), bwd)
    return out


# ---------------------------------------------------------------------------
# softmax with validity mask
# ---------------------------------------------------------------------------

def softmax_masked(logits, mask=None) -> Tensor:
    """Softmax over the last axis restricted to valid positions.

    Masked positions get exactly zero probability and never see the
    logit values stored there. Stabilized by subtracting the max over
    valid positions. A row with no valid position is an error.
    """
    logits = as_tensor(logits)
    xd = logits.data
    if mask is None:
        valid = np.ones(xd.shape, dtype=bool)
    else:
        md = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
        valid = np.broadcast_to(md.astype(bool), xd.shape)
    if not valid.any(axis=-1).all():
        raise DegenerateRowError("softmax row with no valid position")
    z = np.where(valid, xd, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)
    tape = recording_for(logits)
    if tape is not None:
        pd = out.data

        def bwd(g):
            inner = (g * pd).sum(axis=-1, keepdims=True)
            return (pd * (g - inner), None)

        tape.record(out, (logits, mask), bwd)
    return out


# ---------------------------------------------------------------------------
# layer normalization
# ---------------------------------------------------------------------------

LAYER_NORM_EPS = 1e-5


def layer_norm(x, gain, bias) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match last axis {n}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (xd - mu) * inv
    out = Tensor(gain.data * xhat + bias.data)
    tape = recording_for(x, gain, bias)
    if tape is not None:
        gd = gain.data

        def bwd(g):
            red = tuple(range(g.ndim - 1))
            dgain = (g * xhat).sum(axis=red)
            dbias = g.sum(axis=red)
            gx = g * gd
            dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            return dx, dgain, dbias

        tape.record(out, (x, gain, bias), bwd)
    return out


# ---------------------------------------------------------------------------
# temporal convolution
# ---------------------------------------------------------------------------

def conv1d(x, kernel, bias) -> Tensor:
    """Cross-correlation along the time axis with 'same' zero padding.

    x: (..., T, C_in), kernel: (w, C_in, C_out) with odd w, bias: (C_out,).
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.ndim < 2 or kernel.ndim != 3:
        raise ShapeError(f"conv1d needs x (..,T,C) and kernel (w,C,O), got {x.shape}, {kernel.shape}")
    w, c_in, c_out = kernel.shape
    if w % 2 == 0:
        raise ShapeError(f"conv1d kernel width must be odd, got {w}")
    if x.shape[-1] != c_in:
        raise ShapeError(f"conv1d channel mismatch: x {x.shape} vs kernel {kernel.shape}")
    t = x.shape[-2]
    if t < 1:
        raise ShapeError(f"conv1d needs at least one timestep, x is {x.shape}")
    pad = w // 2
    lead = x.shape[:-2]
    xr = x.data.reshape((-1, t, c_in))
    xp = np.pad(xr, ((0, 0), (pad, pad), (0, 0)))
    out_r = np.zeros((xr.shape[0], t, c_out), dtype=xr.dtype)
    kd = kernel.data
    for i in range(w):
        out_r += xp[:, i:i + t, :] @ kd[i]
    out_r += bias.data
    out = Tensor(out_r.reshape(lead + (t, c_out)))
    tape = recording_for(x, kernel, bias)
    if tape is not None:
        need_x = x._tracked

        def bwd(g):
            gr = g.reshape((-1, t, c_out))
            gb = gr.sum(axis=(0, 1))
            gk = np.empty_like(kd)
            gxp = np.zeros_like(xp) if need_x else None
            for i in range(w):
                gk[i] = np.einsum("ntc,nto->co", xp[:, i:i + t, :], gr)
                if need_x:
                    gxp[:, i:i + t, :] += gr @ kd[i].T
            gx = gxp[:, pad:pad + t, :].reshape(x.shape) if need_x else None
            return gx, gk, gb

        tape.record(out, (x, kernel, bias), bwd)
    return out


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------

def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Zero each element with probability ``rate`` and rescale survivors.

    Identity when not training or rate == 0. Draws from the engine
    generator unless an explicit one is passed.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        rng = generator()
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    out = Tensor(x.data * keep)
    tape = recording_for(x)
    if tape is not None:
        tape.record(out, (x,), lambda g: (g * keep,))
    return out


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    tape = recording_for(x)
    if tape is not None:
        orig = x.shape
        tape.record(out, (x,), lambda g: (g.reshape(orig),))
    return out


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.transpose(axes))
    tape = recording_for(x)
    if tape is not None:
        inv = None if axes is None else tuple(np.argsort(axes))
        tape.record(out, (x,), lambda g: (g.transpose(inv),))
    return out


def swap_last(x) -> Tensor:
    """Transpose the trailing two axes (batch-friendly matrix transpose)."""
    x = as_tensor(x)
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return transpose(x, axes)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    tape = recording_for(*tensors)
    if tape is not None:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def bwd(g):
            return tuple(np.split(g, splits, axis=axis))

        tape.record(out, tuple(tensors), bwd)
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def unstack(x, axis: int = 0) -> list:
    """Split one axis into a list of tensors; backward restacks in one shot."""
    x = as_tensor(x)
    ax = axis % x.ndim
    moved = np.moveaxis(x.data, ax, 0)
    outs = tuple(Tensor(moved[i]) for i in range(moved.shape[0]))
    tape = recording_for(x)
    if tape is not None:
        def bwd(gs):
            return (np.moveaxis(np.stack(gs, axis=0), 0, ax),)

        tape.record(outs, (x,), bwd)
    return list(outs)


def split(x, indices, axis: int = -1) -> list:
    """np.split as a multi-output op; backward concatenates the pieces."""
    x = as_tensor(x)
    parts = np.split(x.data, indices, axis=axis)
    outs = tuple(Tensor(p) for p in parts)
    tape = recording_for(x)
    if tape is not None:
        def bwd(gs):
            return (np.concatenate(gs, axis=axis),)

        tape.record(outs, (x,), bwd)
    return list(outs)


def getitem(x, key) -> Tensor:
    """Basic slicing/integer indexing; backward scatters into zeros."""
    x = as_tensor(x)
    out = Tensor(x.data[key])
    tape = recording_for(x)
    if tape is not None:
        shape, dtype = x.shape, x.data.dtype

        def bwd(g):
            gx = np.zeros(shape, dtype=dtype)
            gx[key] = g
            return (gx,)

        tape.record(out, (x,), bwd)
    return out


def take_rows(x, indices) -> Tensor:
    """Pick one row per batch element: out[b] = x[b, indices[b]].

    Gradient flows only into the selected rows; all other rows receive
    exactly zero.
    """
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if x.ndim < 2 or idx.shape != (x.shape[0],):
        raise ShapeError(f"take_rows: x {x.shape} with indices {idx.shape}")
    batch = np.arange(x.shape[0])
    out = Tensor(x.data[batch, idx])
    tape = recording_for(x)
    if tape is not None:
        shape, dtype = x.shape, x.data.dtype

        def bwd(g):
            gx = np.zeros(shape, dtype=dtype)
            gx[batch, idx] = g
            return (gx,)

        tape.record(out, (x,), bwd)
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))
    tape = recording_for(x)
    if tape is not None:
        shape = x.shape

        def bwd(g):
            return (_spread(g, shape, axis, keepdims),)

        tape.record(out, (x,), bwd)
    return out


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))
    tape = recording_for(x)
    if tape is not None:
        shape = x.shape
        count = x.size if axis is None else np.prod(
            [shape[a] for a in _normalize_axes(axis, x.ndim)])

        def bwd(g):
            return (_spread(g, shape, axis, keepdims) / count,)

        tape.record(out, (x,), bwd)
    return out


def max_pool(x, axis: int, keepdims: bool = False) -> Tensor:
    """Max over one axis; gradient flows to the first maximal position."""
    x = as_tensor(x)
    idx = x.data.argmax(axis=axis)
    out_data = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out_data = out_data.squeeze(axis=axis)
    out = Tensor(out_data)
    tape = recording_for(x)
    if tape is not None:
        shape, dtype = x.shape, x.data.dtype

        def bwd(g):
            gk = g if keepdims else np.expand_dims(g, axis)
            gx = np.zeros(shape, dtype=dtype)
            np.put_along_axis(gx, np.expand_dims(idx, axis), gk, axis=axis)
            return (gx,)

        tape.record(out, (x,), bwd)
    return out


def _normalize_axes(axis, ndim):
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _spread(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape).copy() if np.ndim(g) == 0 else np.full(shape, g)
    if not keepdims:
        for a in sorted(_normalize_axes(axis, len(shape))):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape).copy()


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

class LSTMParams:
    """Weights of a single LSTM layer, gates packed as [input, forget, output, cell]."""

    def __init__(self, w_x: Tensor, w_h: Tensor, b: Tensor):
        c4 = w_x.shape[-1]
        if c4 % 4 or w_h.shape[-1] != c4 or b.shape != (c4,):
            raise ShapeError(
                f"LSTM parameter shapes inconsistent: {w_x.shape}, {w_h.shape}, {b.shape}")
        if w_h.shape[-2] * 4 != c4:
            raise ShapeError(f"LSTM hidden size mismatch: w_h {w_h.shape} vs 4H={c4}")
        self.w_x = w_x
        self.w_h = w_h
        self.b = b

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[-2]


def lstm_forward(x, params: LSTMParams, h0=None, c0=None):
    """Run an LSTM over (..., T, C); returns (h_T, all hidden states (..., T, H)).

    Built from primitive ops so the backward pass comes from the tape.
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"lstm_forward needs (..., T, C), got {x.shape}")
    t_len = x.shape[-2]
    if t_len == 0:
        raise ShapeError("lstm_forward on an empty sequence")
    if x.shape[-1] != params.w_x.shape[0]:
        raise ShapeError(f"lstm_forward input size {x.shape} vs w_x {params.w_x.shape}")
    h_size = params.hidden_size
    lead = x.shape[:-2]
    h = as_tensor(np.zeros(lead + (h_size,))) if h0 is None else as_tensor(h0)
    c = as_tensor(np.zeros(lead + (h_size,))) if c0 is None else as_tensor(c0)
    # One big input projection for all timesteps, unstacked once.
    x_steps = unstack(matmul(x, params.w_x), axis=x.ndim - 2)
    hs = []
    for t in range(t_len):
        z = add(add(x_steps[t], matmul_vec(h, params.w_h)), params.b)
        pre_sig, pre_tanh = split(z, [3 * h_size], axis=-1)
        gates = sigmoid(pre_sig)
        i_g, f_g, o_g = split(gates, [h_size, 2 * h_size], axis=-1)
        g_g = tanh(pre_tanh)
        c = add(mul(f_g, c), mul(i_g, g_g))
        h = mul(o_g, tanh(c))
        hs.append(h)
    return h, stack(hs, axis=len(lead))


def matmul_vec(x, w) -> Tensor:
    """matmul for (..., C) @ (C, D): promote the vector to a row matrix."""
    x = as_tensor(x)
    r = reshape(x, x.shape[:-1] + (1, x.shape[-1]))
    out = matmul(r, w)
    return reshape(out, x.shape[:-1] + (w.shape[-1],))
