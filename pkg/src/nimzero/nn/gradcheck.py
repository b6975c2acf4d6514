"""Central finite-difference gradient checks."""
from __future__ import annotations

import numpy as np

from nimzero.nn.core import Param


def relative_errors(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    keep = scale >= floor
    return np.abs(analytic - numeric)[keep] / scale[keep]


def numeric_gradient(loss_fn, array, step=1e-4):
    grad = np.zeros(array.shape, dtype=np.float64)
    flat = array.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = loss_fn()
        flat[i] = old - step
        down = loss_fn()
        flat[i] = old
        grad.reshape(-1)[i] = (up - down) / (2 * step)
    return grad


def gradient_check(loss_and_backward, loss_only, params: list[Param], step=1e-4, floor=1e-8):
    """Max relative error between analytic and numeric gradients.

    ``loss_and_backward()`` must zero and refill every ``Param.grad``;
    ``loss_only()`` evaluates the loss without touching gradients. Components
    where both gradients are below ``floor`` are skipped.
    """
    loss_and_backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        errs = relative_errors(a, numeric_gradient(loss_only, p.value, step), floor)
        if errs.size:
            worst = max(worst, float(errs.max()))
    return worst
