"""LSTM, linear and batch-norm layers with explicit backward passes.

Sequences are time-major: ``x`` has shape ``(T, B, features)``. ``forward``
keeps what ``backward`` needs only when ``train=True``; inference calls skip
the per-step caches.
"""
from __future__ import annotations

import numpy as np

from nimzero import kernels
from nimzero.nn.core import DegenerateBatch, MissingCache, Module, Param, uniform_init


class LSTM(Module):
    """Single LSTM layer, gate order [input, forget, cell, output].

    Weights are drawn uniformly from +-1/sqrt(fan_in); biases start at zero
    except the forget gate, which starts at +1.
    """

    def __init__(self, input_size, hidden_size=128, rng=None, dtype=np.float64):
        rng = np.random.default_rng() if rng is None else rng
        self.input_size = input_size
        self.hidden_size = hidden_size
        H = hidden_size
        self.w_x = Param(uniform_init(rng, (input_size, 4 * H), input_size, dtype))
        self.w_h = Param(uniform_init(rng, (H, 4 * H), H, dtype))
        bias = np.zeros(4 * H, dtype=dtype)
        bias[H : 2 * H] = 1.0
        self.bias = Param(bias)
        self._cache = None

    def named_params(self):
        return [("w_x", self.w_x), ("w_h", self.w_h), ("bias", self.bias)]

    def forward(self, x, train=False):
        T, B, _ = x.shape
        H = self.hidden_size
        dtype = self.w_h.value.dtype
        x = x.astype(dtype, copy=False)
        xz = (x.reshape(T * B, -1) @ self.w_x.value + self.bias.value).reshape(T, B, 4 * H)
        h = np.zeros((B, H), dtype=dtype)
        c = np.zeros((B, H), dtype=dtype)
        hs = np.empty((T, B, H), dtype=dtype)
        if train:
            gates_t = np.empty((T, B, 4 * H), dtype=dtype)
            cs = np.empty((T + 1, B, H), dtype=dtype)
            tanh_cs = np.empty((T, B, H), dtype=dtype)
            cs[0] = 0
        for t in range(T):
            z = xz[t] + h @ self.w_h.value
            gates, c, tanh_c, h = kernels.lstm_cell_forward(z, c)
            hs[t] = h
            if train:
                gates_t[t] = gates
                cs[t + 1] = c
                tanh_cs[t] = tanh_c
        self._cache = (x, hs, gates_t, cs, tanh_cs) if train else None
        return hs

    def backward(self, dhs):
        """Backpropagation through time. ``dhs`` is the loss gradient w.r.t.
        every hidden state; returns the gradient w.r.t. the inputs."""
        if self._cache is None:
            raise MissingCache("LSTM.backward needs a forward(train=True) first")
        x, hs, gates_t, cs, tanh_cs = self._cache
        T, B, H = hs.shape
        dtype = hs.dtype
        dz_all = np.empty((T, B, 4 * H), dtype=dtype)
        dh_next = np.zeros((B, H), dtype=dtype)
        dc = np.zeros((B, H), dtype=dtype)
        w_h_t = self.w_h.value.T
        for t in range(T - 1, -1, -1):
            dh = dhs[t] + dh_next
            dz, dc = kernels.lstm_cell_backward(dh, dc, gates_t[t], cs[t], tanh_cs[t])
            dz_all[t] = dz
            dh_next = dz @ w_h_t
        flat_dz = dz_all.reshape(T * B, 4 * H)
        if T > 1:
            h_prev = hs[:-1].reshape((T - 1) * B, H)
            self.w_h.grad += h_prev.T @ flat_dz[B:]
        self.w_x.grad += x.reshape(T * B, -1).T @ flat_dz
        self.bias.grad += flat_dz.sum(axis=0)
        self._cache = None
        return (flat_dz @ self.w_x.value.T).reshape(T, B, -1)


class LSTMStack(Module):
    def __init__(self, input_size, hidden_size=128, layers=1, rng=None, dtype=np.float64):
        if not 1 <= layers <= 10:
            raise ValueError(f"layer count must be in [1, 10], got {layers}")
        rng = np.random.default_rng() if rng is None else rng
        self.layers = []
        for i in range(layers):
            self.layers.append(LSTM(input_size if i == 0 else hidden_size, hidden_size, rng, dtype))
        self.hidden_size = hidden_size
        self.input_size = input_size

    def named_params(self):
        return [(f"lstm{i}.{n}", p) for i, layer in enumerate(self.layers)
                for n, p in layer.named_params()]

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dhs):
        for layer in reversed(self.layers):
            dhs = layer.backward(dhs)
        return dhs

    def forward_last(self, x, train=False):
        """Final hidden state of the top layer, shape ``(B, H)``."""
        self._seq_len = x.shape[0]
        return self.forward(x, train)[-1]

    def backward_last(self, dh_last):
        T = self._seq_len
        dhs = np.zeros((T,) + dh_last.shape, dtype=dh_last.dtype)
        dhs[-1] = dh_last
        return self.backward(dhs)


class Linear(Module):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float64):
        rng = np.random.default_rng() if rng is None else rng
        self.w = Param(uniform_init(rng, (in_features, out_features), in_features, dtype))
        self.b = Param(np.zeros(out_features, dtype=dtype))
        self._x = None

    def named_params(self):
        return [("w", self.w), ("b", self.b)]

    def forward(self, x, train=False):
        if train:
            self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dy):
        if self._x is None:
            raise MissingCache("Linear.backward needs a forward(train=True) first")
        self.w.grad += self._x.T @ dy
        self.b.grad += dy.sum(axis=0)
        self._x = None
        return dy @ self.w.value.T


class BatchNorm1d(Module):
    """Batch normalisation over the batch axis of ``(B, features)`` inputs.

    Train mode normalises with the (biased) batch variance and updates the
    running statistics with the unbiased one; eval mode uses the running
    statistics.
    """

    def __init__(self, features, momentum=0.1, eps=1e-5, dtype=np.float64):
        self.gamma = Param(np.ones(features, dtype=dtype))
        self.beta = Param(np.zeros(features, dtype=dtype))
        self.running_mean = np.zeros(features, dtype=dtype)
        self.running_var = np.ones(features, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.training = True
        self._cache = None

    def named_params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def forward(self, x, train=False):
        if self.training:
            B = x.shape[0]
            if B < 2:
                raise DegenerateBatch(f"batch norm needs >= 2 rows in train mode, got {B}")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var * B / (B - 1)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        if train:
            self._cache = (xhat, inv_std, self.training)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, dy):
        if self._cache is None:
            raise MissingCache("BatchNorm1d.backward needs a forward(train=True) first")
        xhat, inv_std, batch_stats = self._cache
        self._cache = None
        self.gamma.grad += (dy * xhat).sum(axis=0)
        self.beta.grad += dy.sum(axis=0)
        dxhat = dy * self.gamma.value
        if not batch_stats:
            return dxhat * inv_std
        B = dy.shape[0]
        return inv_std / B * (B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
