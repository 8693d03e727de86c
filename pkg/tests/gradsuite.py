"""Finite-difference gradient suite covering every differentiable engine op.

Each case draws random small shapes and inputs in [-2, 2] (shifted where an
op needs it, e.g. positive inputs for log) and compares tape gradients of a
random projection of the output against central differences of the forward
pass alone. Used both by the quick unit test and the acceptance criterion.
"""

from functools import partial

import numpy as np

from mmtp import engine as E

from helpers import check_gradients


def _shape(rng, ndim_lo=1, ndim_hi=3, ext_hi=5):
    ndim = int(rng.integers(ndim_lo, ndim_hi + 1))
    return tuple(int(rng.integers(1, ext_hi + 1)) for _ in range(ndim))


def _uniform(rng, shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, size=shape)


def _spread(rng, shape):
    """Values in [-2,2] with comfortable pairwise gaps (keeps max_pool FD clean)."""
    n = int(np.prod(shape))
    vals = np.linspace(-2.0, 2.0, max(n, 2))[:n]
    vals = vals + rng.uniform(-0.2, 0.2, n) * (4.0 / max(n, 2))
    return rng.permutation(vals).reshape(shape)


def _away_from(rng, shape, kinks, margin):
    x = _uniform(rng, shape)
    for k in kinks:
        near = np.abs(x - k) < margin
        x = np.where(near, k + np.sign(x - k + 1e-12) * (margin + 0.05), x)
    return x


# --- case builders: return (op, arg_arrays, wrt_indices) -------------------

def case_add(rng):
    s = _shape(rng)
    return E.add, [_uniform(rng, s), _uniform(rng, s)], (0, 1)


def case_add_broadcast(rng):
    s = _shape(rng, 2, 3)
    return E.add, [_uniform(rng, s), _uniform(rng, s[-1:])], (0, 1)


def case_sub(rng):
    s = _shape(rng)
    return E.sub, [_uniform(rng, s), _uniform(rng, s)], (0, 1)


def case_mul(rng):
    s = _shape(rng)
    return E.mul, [_uniform(rng, s), _uniform(rng, s)], (0, 1)


def case_scale(rng):
    return partial(E.scale, s=float(rng.uniform(-2, 2))), [_uniform(rng, _shape(rng))], (0,)


def case_exp(rng):
    return E.exp, [_uniform(rng, _shape(rng))], (0,)


def case_log(rng):
    return E.log, [_uniform(rng, _shape(rng), 0.1, 2.0)], (0,)


def case_tanh(rng):
    return E.tanh, [_uniform(rng, _shape(rng))], (0,)


def case_sigmoid(rng):
    return E.sigmoid, [_uniform(rng, _shape(rng))], (0,)


def case_elu(rng):
    return E.elu, [_away_from(rng, _shape(rng), [0.0], 0.05)], (0,)


def case_huber(rng):
    return E.huber, [_away_from(rng, _shape(rng), [-1.0, 0.0, 1.0], 0.05)], (0,)


def case_matmul(rng):
    m, k, n = (int(rng.integers(1, 5)) for _ in range(3))
    return E.matmul, [_uniform(rng, (m, k)), _uniform(rng, (k, n))], (0, 1)


def case_matmul_batched(rng):
    b, m, k, n = (int(rng.integers(1, 4)) for _ in range(4))
    return E.matmul, [_uniform(rng, (b, m, k)), _uniform(rng, (k, n))], (0, 1)


def case_softmax_masked(rng):
    s = _shape(rng, 1, 2, 5)
    mask = rng.random(s) < 0.7
    mask[..., 0] = True
    return partial(_softmax_with, mask=mask), [_uniform(rng, s)], (0,)


def _softmax_with(x, mask):
    return E.softmax_masked(x, mask)


def case_layer_norm(rng):
    s = _shape(rng, 1, 3, 5)
    n = s[-1]
    return E.layer_norm, [_uniform(rng, s), _uniform(rng, (n,)), _uniform(rng, (n,))], (0, 1, 2)


def case_conv1d(rng):
    t = int(rng.integers(1, 6))
    c = int(rng.integers(1, 4))
    o = int(rng.integers(1, 4))
    return E.conv1d, [_uniform(rng, (t, c)), _uniform(rng, (3, c, o)), _uniform(rng, (o,))], (0, 1, 2)


def case_dropout(rng):
    seed = int(rng.integers(0, 2 ** 31))

    def op(x):
        return E.dropout(x, 0.4, training=True, rng=np.random.default_rng(seed))

    return op, [_uniform(rng, _shape(rng))], (0,)


def case_reshape(rng):
    s = _shape(rng, 2, 3)
    return partial(E.reshape, shape=(-1,)), [_uniform(rng, s)], (0,)


def case_transpose(rng):
    s = _shape(rng, 2, 3)
    axes = tuple(rng.permutation(len(s)).tolist())
    return partial(E.transpose, axes=axes), [_uniform(rng, s)], (0,)


def case_concat(rng):
    s = _shape(rng, 1, 2)
    a = _uniform(rng, s)
    b = _uniform(rng, s)
    return (lambda x, y: E.concat([x, y], axis=0)), [a, b], (0, 1)


def case_getitem(rng):
    s = _shape(rng, 2, 3, 6)
    stop = int(rng.integers(1, s[0] + 1))
    return partial(E.getitem, key=(slice(0, stop),)), [_uniform(rng, s)], (0,)


def case_unstack(rng):
    s = _shape(rng, 2, 3)
    ax = int(rng.integers(0, len(s)))
    pick = int(rng.integers(0, s[ax]))

    def op(x):
        return E.unstack(x, axis=ax)[pick]

    return op, [_uniform(rng, s)], (0,)


def case_split(rng):
    s = _shape(rng, 1, 2, 6)
    cut = int(rng.integers(1, s[-1])) if s[-1] > 1 else 0
    pick = int(rng.integers(0, 2)) if cut else 0

    def op(x):
        parts = E.split(x, [cut], axis=-1) if cut else [x]
        chosen = parts[min(pick, len(parts) - 1)]
        return chosen if chosen.size else parts[0]

    return op, [_uniform(rng, s)], (0,)


def case_take_rows(rng):
    b = int(rng.integers(1, 5))
    k = int(rng.integers(1, 4))
    d = int(rng.integers(1, 4))
    idx = rng.integers(0, k, size=b)
    return partial(_take_with, idx=idx), [_uniform(rng, (b, k, d))], (0,)


def _take_with(x, idx):
    return E.take_rows(x, idx)


def case_sum(rng):
    s = _shape(rng)
    ax = int(rng.integers(0, len(s)))
    return partial(E.sum_, axis=ax), [_uniform(rng, s)], (0,)


def case_mean(rng):
    s = _shape(rng)
    return E.mean, [_uniform(rng, s)], (0,)


def case_max_pool(rng):
    s = _shape(rng, 1, 3, 4)
    ax = int(rng.integers(0, len(s)))
    return partial(E.max_pool, axis=ax), [_spread(rng, s)], (0,)


def case_lstm(rng):
    t = int(rng.integers(1, 4))
    c = int(rng.integers(1, 3))
    h = int(rng.integers(1, 3))

    def op(x, w_x, w_h, b, h0, c0):
        params = E.LSTMParams(w_x, w_h, b)
        h_t, _ = E.lstm_forward(x, params, h0=h0, c0=c0)
        return h_t

    args = [_uniform(rng, (t, c)), _uniform(rng, (c, 4 * h)), _uniform(rng, (h, 4 * h)),
            _uniform(rng, (4 * h,)), _uniform(rng, (h,)), _uniform(rng, (h,))]
    return op, args, (0, 1, 2, 3, 4, 5)


ALL_CASES = {
    "add": case_add,
    "add_broadcast": case_add_broadcast,
    "sub": case_sub,
    "mul": case_mul,
    "scale": case_scale,
    "exp": case_exp,
    "log": case_log,
    "tanh": case_tanh,
    "sigmoid": case_sigmoid,
    "elu": case_elu,
    "huber": case_huber,
    "matmul": case_matmul,
    "matmul_batched": case_matmul_batched,
    "softmax_masked": case_softmax_masked,
    "layer_norm": case_layer_norm,
    "conv1d": case_conv1d,
    "dropout": case_dropout,
    "reshape": case_reshape,
    "transpose": case_transpose,
    "concat": case_concat,
    "getitem": case_getitem,
    "unstack": case_unstack,
    "split": case_split,
    "take_rows": case_take_rows,
    "sum": case_sum,
    "mean": case_mean,
    "max_pool": case_max_pool,
    "lstm_forward": case_lstm,
}


def run_case(name, n_shapes, precision, tol, h, seed=0):
    """Gradient-check one op over n random shape draws; returns worst rel err."""
    build = ALL_CASES[name]
    rng = np.random.default_rng(seed + hash(name) % 10_000)
    worst = 0.0
    ctx = E.extended_precision() if precision == "extended" else _single()
    # float32 backward passes carry cancellation noise, so small elements are
    # judged against a larger fraction of the op's overall gradient scale
    floor_frac = 1e-3 if precision == "extended" else 2e-2
    with ctx:
        for _ in range(n_shapes):
            op, args, wrt = build(rng)
            worst = max(worst, check_gradients(op, args, wrt, tol, rng, h=h,
                                               floor_frac=floor_frac))
    return worst


class _single:
    def __enter__(self):
        E.set_precision("single")
        return self

    def __exit__(self, *exc):
        E.set_precision("single")
        return False
