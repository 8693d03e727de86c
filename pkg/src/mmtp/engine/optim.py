"""Nadam optimizer and global-norm gradient clipping."""

from __future__ import annotations

import math

import numpy as np

from mmtp.engine.tensor import Tensor
from mmtp.errors import ShapeError


def global_norm(grads) -> float:
    """L2 norm of the whole gradient set, flattened together."""
    total = 0.0
    for g in grads:
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return math.sqrt(total)


def clip_global_norm(grads, threshold: float):
    """Scale all gradients by threshold/norm when the global norm exceeds it.

    Returns (gradient list, pre-clip global norm). Direction is preserved;
    gradients at or below the threshold pass through unchanged.
    """
    if threshold <= 0:
        raise ValueError(f"clip threshold must be positive, got {threshold}")
    norm = global_norm(grads)
    if norm <= threshold:
        return list(grads), norm
    factor = threshold / norm
    return [g * factor for g in grads], norm


class Nadam:
    """Nesterov-accelerated Adam with bias-corrected moments.

    Per step, with decay rates b1/b2 and gradient g:

        m <- b1 m + (1-b1) g          v <- b2 v + (1-b2) g^2
        m^ <- m / (1-b1^t)            v^ <- v / (1-b2^t)
        p <- p - lr (b1 m^ + (1-b1) g / (1-b1^t)) / (sqrt(v^) + eps)
    """

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float, grads: dict[str, np.ndarray] | None = None) -> None:
        """Apply one update from ``grads`` (default: each param's .grad)."""
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for name, p in self.params.items():
            g = grads[name] if grads is not None else p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} vs parameter {p.data.shape} for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / c1
            v_hat = v / c2
            update = lr * (b1 * m_hat + (1.0 - b1) / c1 * g) / (np.sqrt(v_hat) + self.eps)
            p.data = p.data - update.astype(p.data.dtype)
