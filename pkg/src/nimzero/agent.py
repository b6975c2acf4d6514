"""The policy/value network and the evaluators tree search talks to.

An *evaluator* is anything with

* ``evaluate(board) -> NetEvaluation`` for one non-terminal position, and
* ``evaluate_positions(capacities, positions) -> (priors, values)`` for an
  ``(m, k)`` array of heap sizes, priors already masked to legal moves.

:class:`PolicyValueNet` is the trainable one; :class:`OracleStubNet` and
:class:`UniformNet` are fixed test doubles. :class:`TableEvaluator` caches any
evaluator over the whole position space so search runs on table lookups.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from nimzero.game import (
    NimBoard,
    action_space_size,
    action_tables,
    all_positions,
    encode_positions,
    encode_state,
    is_terminal,
    legal_mask,
    position_count,
    position_index,
    position_strides,
)
from nimzero.nn.checkpoint import ArchDescriptor, CheckpointError, read_checkpoint, write_checkpoint
from nimzero.nn.core import Module, softmax
from nimzero.nn.layers import Linear, LSTMStack
from nimzero.oracle import nim_sum_table


class TerminalPosition(ValueError):
    pass


@dataclass(frozen=True)
class NetEvaluation:
    priors: np.ndarray  # whole action space; zero on illegal actions
    value: float  # for the player to move

    def prior_of(self, action: int) -> float:
        return float(self.priors[action])


def win_probability(v: float) -> float:
    return 0.5 + v / 2


def legal_masks(capacities: Sequence[int], positions: np.ndarray) -> np.ndarray:
    heap_of, count_of = action_tables(capacities)
    return count_of[None, :] <= np.asarray(positions)[:, heap_of]


def mask_priors(probs: np.ndarray, legal: np.ndarray) -> np.ndarray:
    """Zero illegal actions and renormalise each row.

    Rows whose legal mass underflows fall back to uniform over legal moves;
    rows with no legal move stay all-zero.
    """
    p = np.where(legal, probs, 0.0).astype(np.float64)
    total = p.sum(axis=1, keepdims=True)
    n_legal = legal.sum(axis=1, keepdims=True)
    bad = ~(total > 0) | ~np.isfinite(total)
    uniform = np.where(legal, 1.0 / np.maximum(n_legal, 1), 0.0)
    return np.where(bad, uniform, p / np.where(bad, 1.0, total))


class PolicyValueNet(Module):
    """Shared LSTM trunk over the unary token encoding, with a softmax policy
    head over every action of the board and a tanh value head."""

    def __init__(self, capacities: Sequence[int], hidden_size=128, layers=1, rng=None,
                 dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        self.capacities = tuple(int(n) for n in capacities)
        self.action_size = action_space_size(self.capacities)
        self.hidden_size = hidden_size
        self.trunk = LSTMStack(1, hidden_size, layers, rng, dtype)
        self.policy_head = Linear(hidden_size, self.action_size, rng, dtype)
        self.value_head = Linear(hidden_size, 1, rng, dtype)
        self._v = None

    @property
    def layers(self):
        return len(self.trunk.layers)

    @property
    def dtype(self):
        return self.value_head.w.value.dtype

    def named_params(self):
        return (self.trunk.named_params()
                + [(f"policy.{n}", p) for n, p in self.policy_head.named_params()]
                + [(f"value.{n}", p) for n, p in self.value_head.named_params()])

    def forward(self, tokens: np.ndarray, train=False):
        """``tokens`` is ``(B, L)``; returns policy logits ``(B, A)`` and values ``(B,)``."""
        x = np.asarray(tokens, dtype=self.dtype).T[:, :, None]
        h = self.trunk.forward_last(x, train)
        logits = self.policy_head.forward(h, train)
        v = np.tanh(self.value_head.forward(h, train)[:, 0])
        if train:
            self._v = v
        return logits, v

    def backward(self, dlogits, dv):
        dpre = (np.asarray(dv) * (1.0 - self._v * self._v))[:, None].astype(self.dtype)
        dh = self.policy_head.backward(np.asarray(dlogits, dtype=self.dtype))
        dh = dh + self.value_head.backward(dpre)
        self.trunk.backward_last(dh)

    def predict(self, tokens: np.ndarray, chunk=4096):
        """Unmasked policy probabilities and values, evaluated in chunks."""
        probs, values = [], []
        for start in range(0, tokens.shape[0], chunk):
            logits, v = self.forward(tokens[start : start + chunk])
            probs.append(softmax(logits.astype(np.float64)))
            values.append(v.astype(np.float64))
        if not probs:
            return np.zeros((0, self.action_size)), np.zeros(0)
        return np.concatenate(probs), np.concatenate(values)

    def evaluate(self, board: NimBoard) -> NetEvaluation:
        return evaluate(self, board)

    def evaluate_positions(self, capacities, positions):
        self._check_board(capacities)
        positions = np.asarray(positions)
        probs, values = self.predict(encode_positions(self.capacities, positions))
        return mask_priors(probs, legal_masks(self.capacities, positions)), values

    def _check_board(self, capacities):
        if tuple(capacities) != self.capacities:
            raise ValueError(f"net built for board {self.capacities}, asked about {tuple(capacities)}")

    # persistence -----------------------------------------------------------

    def descriptor(self) -> ArchDescriptor:
        return ArchDescriptor(self.capacities, 1, self.hidden_size, self.layers,
                              self.action_size, 1)

    def save(self, path):
        write_checkpoint(path, self.descriptor(), self.get_flat())

    @classmethod
    def load(cls, path, capacities: Sequence[int] | None = None, dtype=np.float32):
        desc, flat = read_checkpoint(path)
        if capacities is not None and tuple(capacities) != desc.capacities:
            raise CheckpointError(
                f"{path} was trained on board {desc.capacities}, not {tuple(capacities)}"
            )
        if desc.input_size != 1 or desc.value_size != 1 or desc.policy_size != sum(desc.capacities):
            raise CheckpointError(f"{path}: descriptor {desc} is not a policy/value net")
        net = cls(desc.capacities, desc.hidden_size, desc.layers, np.random.default_rng(0), dtype)
        net.set_flat(flat)
        return net

    def copy(self) -> "PolicyValueNet":
        twin = PolicyValueNet(self.capacities, self.hidden_size, self.layers,
                              np.random.default_rng(0), self.dtype)
        twin.set_flat(self.get_flat())
        return twin


def evaluate(net, board: NimBoard) -> NetEvaluation:
    """Masked, renormalised priors and the value for ``board``'s mover."""
    if is_terminal(board):
        raise TerminalPosition(f"no moves from {board}")
    probs, values = net.predict(encode_state(board)[None, :])
    priors = mask_priors(probs, legal_mask(board)[None, :])[0]
    return NetEvaluation(priors, float(values[0]))


class OracleStubNet:
    """A perfect "network": uniform priors over the winning moves (all legal
    moves when there are none) and value +1/-1 from the nim-sum.
    ``flip=True`` negates the value."""

    def __init__(self, flip=False):
        self.flip = flip

    def evaluate_positions(self, capacities, positions):
        positions = np.asarray(positions, dtype=np.int64)
        legal = legal_masks(capacities, positions)
        heap_of, count_of = action_tables(capacities)
        xor = np.bitwise_xor.reduce(positions, axis=1) if positions.size else np.zeros(0, np.int64)
        heap_sizes = positions[:, heap_of]
        wins = legal & ((heap_sizes - count_of[None, :]) ^ heap_sizes ^ xor[:, None] == 0)
        wins &= (xor != 0)[:, None]
        target = np.where(wins.any(axis=1, keepdims=True), wins, legal)
        values = np.where(xor != 0, 1.0, -1.0)
        if self.flip:
            values = -values
        return mask_priors(target.astype(np.float64), legal), values

    def evaluate(self, board: NimBoard) -> NetEvaluation:
        if is_terminal(board):
            raise TerminalPosition(f"no moves from {board}")
        priors, values = self.evaluate_positions(board.initial, np.asarray([board.current]))
        return NetEvaluation(priors[0], float(values[0]))


def oracle_stub_net(board: NimBoard) -> NetEvaluation:
    return OracleStubNet().evaluate(board)


class UniformNet:
    """Uniform priors over legal moves and a constant value."""

    def __init__(self, value=0.0):
        self.value = value

    def evaluate_positions(self, capacities, positions):
        positions = np.asarray(positions)
        legal = legal_masks(capacities, positions)
        return mask_priors(legal.astype(np.float64), legal), np.full(positions.shape[0], self.value)

    def evaluate(self, board: NimBoard) -> NetEvaluation:
        if is_terminal(board):
            raise TerminalPosition(f"no moves from {board}")
        priors, values = self.evaluate_positions(board.initial, np.asarray([board.current]))
        return NetEvaluation(priors[0], float(values[0]))


FULL_TABLE_LIMIT = 65536


class TableEvaluator:
    """Per-position cache of an evaluator's outputs, filled a page at a time.

    Boards with at most ``FULL_TABLE_LIMIT`` positions are evaluated in one
    page. Pages always cover the same index range, so a cached entry never
    depends on which lookup triggered it. Tables are float32.
    """

    def __init__(self, source, capacities: Sequence[int], page_size: int | None = None):
        self.source = source
        self.capacities = tuple(int(n) for n in capacities)
        self.size = position_count(self.capacities)
        if page_size is None:
            page_size = self.size if self.size <= FULL_TABLE_LIMIT else 4096
        self.page_size = page_size
        self.action_size = action_space_size(self.capacities)
        self.strides = position_strides(self.capacities)
        self._pages: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _page(self, page):
        if page not in self._pages:
            start = page * self.page_size
            stop = min(start + self.page_size, self.size)
            idx = np.arange(start, stop, dtype=np.int64)
            radix = np.asarray(self.capacities, dtype=np.int64) + 1
            positions = (idx[:, None] // self.strides[None, :]) % radix[None, :]
            priors, values = self.source.evaluate_positions(self.capacities, positions)
            self._pages[page] = (np.asarray(priors, np.float32), np.asarray(values, np.float32))
        return self._pages[page]

    def lookup(self, index: int):
        page, offset = divmod(int(index), self.page_size)
        priors, values = self._page(page)
        return priors[offset], float(values[offset])

    def evaluate(self, board: NimBoard) -> NetEvaluation:
        if is_terminal(board):
            raise TerminalPosition(f"no moves from {board}")
        priors, value = self.lookup(position_index(board))
        return NetEvaluation(priors.astype(np.float64), value)

    def evaluate_positions(self, capacities, positions):
        if tuple(capacities) != self.capacities:
            raise ValueError(f"table built for {self.capacities}")
        idx = np.asarray(positions, dtype=np.int64) @ self.strides
        priors = np.empty((idx.size, self.action_size), dtype=np.float32)
        values = np.empty(idx.size, dtype=np.float32)
        pages = idx // self.page_size
        for page in np.unique(pages):
            sel = pages == page
            p, v = self._page(int(page))
            priors[sel] = p[idx[sel] - page * self.page_size]
            values[sel] = v[idx[sel] - page * self.page_size]
        return priors.astype(np.float64), values.astype(np.float64)

    @property
    def is_single_page(self):
        return self.page_size >= self.size

    def full_table(self):
        """Whole-board ``(priors, values)`` arrays, or None for paged tables."""
        if not self.is_single_page:
            return None
        return self._page(0)


def table_for(evaluator, capacities):
    if isinstance(evaluator, TableEvaluator):
        return evaluator
    return TableEvaluator(evaluator, capacities)


def oracle_outcomes(capacities) -> np.ndarray:
    """+1 for won, -1 for lost positions, by position index."""
    return np.where(nim_sum_table(capacities) != 0, 1.0, -1.0)


def load_net(path: str | Path, capacities=None) -> PolicyValueNet:
    return PolicyValueNet.load(path, capacities)


__all__ = [
    "NetEvaluation", "OracleStubNet", "PolicyValueNet", "TableEvaluator", "TerminalPosition",
    "UniformNet", "all_positions", "evaluate", "load_net", "mask_priors", "oracle_stub_net",
    "win_probability",
]
