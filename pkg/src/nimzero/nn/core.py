"""Parameters, activations and losses with hand-written gradients."""
from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12


class MissingCache(RuntimeError):
    """``backward`` was called without a preceding training ``forward``."""


class ShapeMismatch(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class DegenerateBatch(ValueError):
    pass


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Param(shape={self.value.shape}, dtype={self.value.dtype})"


class Module:
    """Anything holding :class:`Param` objects in ``self.named_params()`` order."""

    def named_params(self) -> list[tuple[str, Param]]:
        raise NotImplementedError

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.value.size for p in self.params())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.params()])

    def set_flat(self, flat: np.ndarray):
        flat = np.asarray(flat)
        if flat.size != self.num_params():
            raise ShapeMismatch(f"expected {self.num_params()} values, got {flat.size}")
        pos = 0
        for p in self.params():
            n = p.value.size
            p.value[...] = flat[pos : pos + n].reshape(p.value.shape)
            pos += n


def uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# activations -----------------------------------------------------------------


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(x):
    return np.maximum(x, 0)


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


# losses -----------------------------------------------------------------------
#
# Each returns (loss, gradient w.r.t. the first argument). Batched inputs are
# averaged over the leading axis.


def cross_entropy_loss(predicted, target):
    """``-sum(target * log(predicted))`` with predictions floored at 1e-12."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    clamped = np.maximum(predicted, PROB_FLOOR)
    rows = 1 if predicted.ndim == 1 else predicted.shape[0]
    loss = -np.sum(target * np.log(clamped)) / rows
    grad = np.where(predicted > PROB_FLOOR, -target / clamped, 0.0) / rows
    return float(loss), grad


def softmax_cross_entropy(logits, target):
    """Cross entropy of ``softmax(logits)`` against ``target`` rows."""
    rows = logits.shape[0]
    logp = log_softmax(logits)
    loss = -np.sum(target * logp) / rows
    return float(loss), (np.exp(logp) - target) / rows


def mse_loss(predicted, target):
    predicted = np.asarray(predicted, dtype=np.float64)
    diff = predicted - np.asarray(target, dtype=np.float64)
    n = max(diff.size, 1)
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def bce_with_logits(logits, labels):
    """Binary cross entropy of ``sigmoid(logits)``, computed stably."""
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n = max(x.size, 1)
    loss = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    return float(loss.sum() / n), (sigmoid(x) - y) / n
