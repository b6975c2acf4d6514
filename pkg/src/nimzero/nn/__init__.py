"""Small differentiable building blocks: LSTM, linear, batch norm, losses, Adam."""
from nimzero.nn.core import (
    DegenerateBatch,
    MissingCache,
    Module,
    NonFiniteError,
    Param,
    ShapeMismatch,
    bce_with_logits,
    cross_entropy_loss,
    log_softmax,
    mse_loss,
    relu,
    sigmoid,
    softmax,
    softmax_cross_entropy,
)
from nimzero.nn.layers import LSTM, BatchNorm1d, Linear, LSTMStack
from nimzero.nn.optim import Adam, AdamState, adam_step

__all__ = [
    "Adam", "AdamState", "BatchNorm1d", "DegenerateBatch", "LSTM", "LSTMStack", "Linear",
    "MissingCache", "Module", "NonFiniteError", "Param", "ShapeMismatch", "adam_step",
    "bce_with_logits", "cross_entropy_loss", "log_softmax", "mse_loss", "relu", "sigmoid",
    "softmax", "softmax_cross_entropy",
]
