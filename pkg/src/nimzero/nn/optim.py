"""Bias-corrected Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from nimzero.nn.core import NonFiniteError, Param, ShapeMismatch


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(state: AdamState, params, grads, names=None):
    """Update ``params`` in place and return them."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch(
            f"{len(params)} params, {len(grads)} grads, {len(state.m)} moment slots"
        )
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ShapeMismatch(f"param {i}: {p.shape} vs grad {g.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        if not np.all(np.isfinite(p)):
            name = names[i] if names else f"#{i}"
            raise NonFiniteError(f"parameter {name} became non-finite at Adam step {state.t}")
    return params


class Adam:
    """Adam bound to a list of :class:`Param`, reading their ``.grad``."""

    def __init__(self, named_params: list[tuple[str, Param]], lr=1e-3, beta1=0.9,
                 beta2=0.999, eps=1e-8, max_grad_norm=None):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.state = AdamState.for_params([p.value for p in self.params], lr=lr,
                                          beta1=beta1, beta2=beta2, eps=eps)
        self.max_grad_norm = max_grad_norm

    def step(self):
        grads = [p.grad for p in self.params]
        for name, g in zip(self.names, grads):
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"gradient of {name} is non-finite")
        if self.max_grad_norm is not None:
            norm = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
            if norm > self.max_grad_norm:
                grads = [g * (self.max_grad_norm / norm) for g in grads]
        adam_step(self.state, [p.value for p in self.params], grads, self.names)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam_t": np.array(self.state.t)}
        for i, (m, v) in enumerate(zip(self.state.m, self.state.v)):
            out[f"adam_m{i}"] = m
            out[f"adam_v{i}"] = v
        return out

    def load_state_arrays(self, arrays):
        self.state.t = int(arrays["adam_t"])
        for i in range(len(self.params)):
            self.state.m[i][...] = arrays[f"adam_m{i}"]
            self.state.v[i][...] = arrays[f"adam_v{i}"]
