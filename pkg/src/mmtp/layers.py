"""Parameterized building blocks on top of the tensor engine."""

from __future__ import annotations

import math

import numpy as np

from mmtp import engine as E


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear:
    """Fully connected layer; callers add activation/dropout per placement rules."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, name: str):
        self.name = name
        self.weight = E.Tensor(glorot_uniform(rng, d_in, d_out, (d_in, d_out)),
                               requires_grad=True)
        self.bias = E.Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x):
        return E.add(E.matmul(x, self.weight), self.bias)

    def parameters(self):
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}


class Conv1d:
    """Temporal conv, kernel width 3, stride 1, 'same' zero padding."""

    WIDTH = 3

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, name: str):
        self.name = name
        w = self.WIDTH
        self.kernel = E.Tensor(glorot_uniform(rng, w * c_in, c_out, (w, c_in, c_out)),
                               requires_grad=True)
        self.bias = E.Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x):
        return E.conv1d(x, self.kernel, self.bias)

    def parameters(self):
        return {f"{self.name}.kernel": self.kernel, f"{self.name}.bias": self.bias}


class LSTM:
    """Single LSTM layer; forget-gate bias starts at 1, weights uniform +-1/sqrt(H)."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator, name: str):
        self.name = name
        lim = 1.0 / math.sqrt(hidden)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        self.params = E.LSTMParams(
            E.Tensor(rng.uniform(-lim, lim, (d_in, 4 * hidden)), requires_grad=True),
            E.Tensor(rng.uniform(-lim, lim, (hidden, 4 * hidden)), requires_grad=True),
            E.Tensor(b, requires_grad=True),
        )

    def __call__(self, x):
        return E.lstm_forward(x, self.params)

    def parameters(self):
        return {f"{self.name}.w_x": self.params.w_x,
                f"{self.name}.w_h": self.params.w_h,
                f"{self.name}.bias": self.params.b}


class LayerNorm:
    def __init__(self, dim: int, name: str):
        self.name = name
        self.gain = E.Tensor(np.ones(dim), requires_grad=True)
        self.bias = E.Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x):
        return E.layer_norm(x, self.gain, self.bias)

    def parameters(self):
        return {f"{self.name}.gain": self.gain, f"{self.name}.bias": self.bias}


class FeedForward:
    """Position-wise expansion/reduction pair with ELU and dropout after each FC."""

    def __init__(self, d_model: int, d_hidden: int, dropout_rate: float,
                 rng: np.random.Generator, name: str):
        self.fc1 = Linear(d_model, d_hidden, rng, f"{name}.fc1")
        self.fc2 = Linear(d_hidden, d_model, rng, f"{name}.fc2")
        self.dropout_rate = dropout_rate

    def __call__(self, x, training: bool):
        h = E.dropout(E.elu(self.fc1(x)), self.dropout_rate, training)
        return E.dropout(self.fc2(h), self.dropout_rate, training)

    def parameters(self):
        return {**self.fc1.parameters(), **self.fc2.parameters()}


def merge_parameters(*blocks) -> dict:
    out = {}
    for block in blocks:
        for key, val in block.parameters().items():
            if key in out:
                raise ValueError(f"duplicate parameter name {key}")
            out[key] = val
    return out
