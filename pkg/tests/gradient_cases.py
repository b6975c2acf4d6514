"""Random configurations for the finite-difference checks.

Each case builds a float64 block, a loss with its analytic backward pass,
and the list of parameters (plus an input array) to perturb.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np

from nimzero.agent import PolicyValueNet
from nimzero.nn.core import (
    Param,
    bce_with_logits,
    cross_entropy_loss,
    mse_loss,
    softmax,
    softmax_cross_entropy,
)
from nimzero.nn.layers import LSTM, BatchNorm1d, Linear, LSTMStack
from nimzero.parity_lab import NimsumPolicyNet, ParityNet


@dataclass
class Case:
    name: str
    loss_and_backward: Callable[[], float]
    loss_only: Callable[[], float]
    params: list


def _lstm(rng, layers):
    T, B, D, H = rng.integers(1, 6), rng.integers(1, 4), rng.integers(1, 4), rng.integers(2, 6)
    net = LSTMStack(D, H, layers, rng, np.float64)
    x = Param(rng.normal(size=(T, B, D)))
    weights = rng.normal(size=(T, B, H))

    def both():
        net.zero_grad()
        x.grad[...] = 0
        hs = net.forward(x.value, train=True)
        x.grad += net.backward(weights)
        return float(np.sum(hs * weights))

    def only():
        return float(np.sum(net.forward(x.value) * weights))

    return Case(f"lstm{layers} T={T} B={B} D={D} H={H}", both, only, net.params() + [x])


def _single_lstm_last(rng):
    T, B, H = rng.integers(2, 7), rng.integers(1, 4), rng.integers(2, 5)
    layer = LSTM(1, H, rng, np.float64)
    x = rng.normal(size=(T, B, 1))
    target = rng.normal(size=(B, H))

    def both():
        layer.zero_grad()
        hs = layer.forward(x, train=True)
        loss, g = mse_loss(hs[-1], target)
        d = np.zeros_like(hs)
        d[-1] = g
        layer.backward(d)
        return loss

    def only():
        return mse_loss(layer.forward(x)[-1], target)[0]

    return Case(f"lstm-last T={T} B={B} H={H}", both, only, layer.params())


def _linear(rng):
    B, i, o = rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 6)
    layer = Linear(i, o, rng, np.float64)
    x = Param(rng.normal(size=(B, i)))
    weights = rng.normal(size=(B, o))

    def both():
        layer.zero_grad()
        x.grad[...] = 0
        y = layer.forward(x.value, train=True)
        x.grad += layer.backward(weights)
        return float(np.sum(y * weights))

    return Case(f"linear {i}->{o} B={B}", both,
                lambda: float(np.sum(layer.forward(x.value) * weights)), layer.params() + [x])


def _batchnorm(rng, training):
    B, F = rng.integers(2, 7), rng.integers(1, 5)
    bn = BatchNorm1d(F, dtype=np.float64)
    bn.gamma.value[...] = rng.normal(size=F)
    bn.beta.value[...] = rng.normal(size=F)
    bn.running_mean[...] = rng.normal(size=F)
    bn.running_var[...] = rng.uniform(0.5, 2.0, size=F)
    bn.train(training)
    x = Param(rng.normal(size=(B, F)) * 2)
    weights = rng.normal(size=(B, F))
    frozen = (bn.running_mean.copy(), bn.running_var.copy())

    def run(train):
        out = bn.forward(x.value, train)
        bn.running_mean[...], bn.running_var[...] = frozen
        return out

    def both():
        bn.zero_grad()
        x.grad[...] = 0
        y = run(True)
        x.grad += bn.backward(weights)
        return float(np.sum(y * weights))

    mode = "train" if training else "eval"
    return Case(f"batchnorm-{mode} B={B} F={F}", both,
                lambda: float(np.sum(run(False) * weights)), bn.params() + [x])


def _losses(rng):
    B, A = rng.integers(1, 5), rng.integers(2, 6)
    logits = Param(rng.normal(size=(B, A)))
    target = softmax(rng.normal(size=(B, A)))
    probs = Param(softmax(rng.normal(size=(B, A))))
    pred = Param(rng.normal(size=B))
    reward = rng.choice([-1.0, 1.0], size=B)
    bin_logits = Param(rng.normal(size=B) * 3)
    labels = rng.integers(0, 2, size=B)

    def total():
        return (softmax_cross_entropy(logits.value, target)[0]
                + cross_entropy_loss(probs.value, target)[0]
                + mse_loss(pred.value, reward)[0]
                + bce_with_logits(bin_logits.value, labels)[0])

    def both():
        logits.grad[...] = softmax_cross_entropy(logits.value, target)[1]
        probs.grad[...] = cross_entropy_loss(probs.value, target)[1]
        pred.grad[...] = mse_loss(pred.value, reward)[1]
        bin_logits.grad[...] = bce_with_logits(bin_logits.value, labels)[1]
        return total()

    return Case(f"losses B={B} A={A}", both, total, [logits, probs, pred, bin_logits])


def _policy_value(rng):
    caps = tuple(int(n) for n in rng.integers(1, 4, size=rng.integers(1, 4)))
    layers = int(rng.integers(1, 3))
    net = PolicyValueNet(caps, int(rng.integers(2, 6)), layers, rng, np.float64)
    B = int(rng.integers(1, 4))
    L = sum(caps) + len(caps) - 1
    tokens = rng.integers(-1, 2, size=(B, L))
    target = softmax(rng.normal(size=(B, sum(caps))))
    reward = rng.choice([-1.0, 1.0], size=B)

    def loss(logits, v):
        return softmax_cross_entropy(logits, target)[0] + mse_loss(v, reward)[0]

    def both():
        net.zero_grad()
        logits, v = net.forward(tokens, train=True)
        net.backward(softmax_cross_entropy(logits, target)[1], mse_loss(v, reward)[1])
        return loss(logits, v)

    return Case(f"policy-value {caps} layers={layers}", both,
                lambda: loss(*net.forward(tokens)), net.params())


def _parity(rng):
    net = ParityNet(int(rng.integers(2, 5)), int(rng.integers(1, 3)), rng, np.float64)
    tokens = rng.integers(-1, 2, size=(int(rng.integers(1, 4)), int(rng.integers(2, 7))))
    labels = rng.integers(0, 2, size=tokens.shape[0])

    def both():
        net.zero_grad()
        logits = net.forward(tokens, train=True)
        loss, g = bce_with_logits(logits, labels)
        net.backward(g)
        return loss

    return Case("parity net", both, lambda: bce_with_logits(net.forward(tokens), labels)[0],
                net.params())


def _nimsum(rng):
    net = NimsumPolicyNet(int(rng.integers(2, 5)), int(rng.integers(1, 3)), rng, np.float64)
    B = int(rng.integers(2, 5))
    tokens = rng.integers(-1, 2, size=(B, int(rng.integers(2, 6))))
    onehot = np.eye(3)[rng.integers(0, 3, size=B)]
    frozen = (net.norm.running_mean.copy(), net.norm.running_var.copy())

    def forward():
        # batch statistics on both sides of the difference
        out = net.forward(tokens, train=True)
        net.norm.running_mean[...], net.norm.running_var[...] = frozen
        return out

    def both():
        net.zero_grad()
        logits = forward()
        loss, g = softmax_cross_entropy(logits, onehot)
        net.backward(g)
        return loss

    return Case("nimsum policy net", both,
                lambda: softmax_cross_entropy(forward(), onehot)[0], net.params())


BUILDERS = [
    lambda r: _lstm(r, 1), lambda r: _lstm(r, 2), lambda r: _lstm(r, 3), _single_lstm_last,
    _linear, lambda r: _batchnorm(r, True), lambda r: _batchnorm(r, False), _losses,
    _policy_value, _parity, _nimsum,
]


def cases(count: int, seed: int = 0) -> list[Case]:
    rng = np.random.default_rng(seed)
    return [BUILDERS[i % len(BUILDERS)](rng) for i in range(count)]
