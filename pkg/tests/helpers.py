"""Shared test oracles, independent of the engine's backward rules."""

import math

import numpy as np

from mmtp import engine as E


def numeric_grad(f, args, wrt: int, h: float = 1e-5) -> np.ndarray:
    """Central finite differences (with one Richardson refinement) of scalar f.

    Only evaluates forward passes (never the tape), so it stays an
    independent check of every analytic gradient.
    """
    x = args[wrt].data
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]

        def delta(step):
            flat[i] = orig + step
            fp = f(*args)
            flat[i] = orig - step
            fm = f(*args)
            flat[i] = orig
            return (fp - fm) / (2.0 * step)

        d_h = delta(h)
        d_h2 = delta(h / 2.0)
        gflat[i] = (4.0 * d_h2 - d_h) / 3.0
    return grad


def check_gradients(op, arg_arrays, wrt_indices, rel_tol, rng, h=1e-5, floor_frac=1e-3):
    """Compare tape gradients of a random projection of op(...) to finite differences.

    The analytic pass runs in the engine's current precision; the
    finite-difference oracle always runs in float64 on the exact values
    the analytic pass saw. Relative error uses a per-tensor floor of
    floor_frac * (gradient infinity norm) so elements that are tiny
    relative to their tensor are judged against the tensor's scale.
    Returns the worst relative error across the checked inputs.
    """
    args = [E.Tensor(a, requires_grad=(i in wrt_indices)) for i, a in enumerate(arg_arrays)]
    probe = rng.standard_normal(op(*args).shape)

    with E.Tape() as tape:
        out = op(*args)
        loss = E.sum_(E.mul(out, E.Tensor(probe)))
        E.backward(tape, loss)
    analytic = {i: np.asarray(args[i].grad, dtype=np.float64) for i in wrt_indices}

    with E.extended_precision():
        args64 = [E.Tensor(a.data.astype(np.float64)) for a in args]

        def scalar(*a):
            return float((op(*a).data.astype(np.float64) * probe).sum())

        # Cancellation in the difference quotient limits what FD can resolve;
        # elements below noise/tol are held to that absolute limit instead.
        f_scale = float(np.abs(op(*args64).data * probe).sum()) + 1e-30
        noise = 50.0 * np.finfo(np.float64).eps * f_scale / h

        scale = max(max(np.abs(a).max() for a in analytic.values()), 1e-12)

        worst = 0.0
        for i in wrt_indices:
            num = numeric_grad(scalar, args64, i, h=h)
            ana = analytic[i]
            denom = np.maximum(np.maximum(np.abs(num), np.abs(ana)),
                               max(floor_frac * scale, noise / rel_tol))
            rel = np.abs(ana - num) / denom
            worst = max(worst, float(rel.max()))
            assert rel.max() < rel_tol, (
                f"gradient mismatch for input {i}: worst rel err {rel.max():.3e} "
                f"(analytic {ana.reshape(-1)[rel.argmax()]}, numeric {num.reshape(-1)[rel.argmax()]})")
    return worst


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Naive triple-loop matrix product for 2-D inputs."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += float(a[i, p]) * float(b[p, j])
            out[i, j] = s
    return out


def lstm_cell_oracle(x, h, c, w_x, w_h, b):
    """One LSTM cell step evaluated scalar by scalar (gates packed [i,f,o,g])."""
    hsz = h.shape[0]
    z = [0.0] * (4 * hsz)
    for j in range(4 * hsz):
        s = float(b[j])
        for p in range(x.shape[0]):
            s += float(x[p]) * float(w_x[p, j])
        for p in range(hsz):
            s += float(h[p]) * float(w_h[p, j])
        z[j] = s

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    h_new = np.zeros(hsz)
    c_new = np.zeros(hsz)
    for j in range(hsz):
        i_g = sig(z[j])
        f_g = sig(z[hsz + j])
        o_g = sig(z[2 * hsz + j])
        g_g = math.tanh(z[3 * hsz + j])
        c_new[j] = f_g * float(c[j]) + i_g * g_g
        h_new[j] = o_g * math.tanh(c_new[j])
    return h_new, c_new


def softmax_oracle(logits, valid):
    """Hand softmax over valid entries of a 1-D row."""
    vals = [math.exp(float(l)) for l, v in zip(logits, valid) if v]
    total = sum(vals)
    out = []
    it = iter(vals)
    for v in valid:
        out.append(next(it) / total if v else 0.0)
    return np.array(out)


def point_polyline_distance(point, polyline) -> float:
    """Min distance from a point to a polyline (segment-wise projection)."""
    p = np.asarray(point, dtype=np.float64)
    pts = np.asarray(polyline, dtype=np.float64)
    best = float("inf")
    for i in range(len(pts) - 1):
        a, b = pts[i], pts[i + 1]
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
        best = min(best, float(np.linalg.norm(a + t * ab - p)))
    if len(pts) == 1:
        best = float(np.linalg.norm(pts[0] - p))
    return best
