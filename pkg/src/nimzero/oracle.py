"""Exact ground truth for nim positions.

Three independent routes to the same answer:

* :func:`nim_sum` -- the xor of the heap sizes;
* :func:`grundy_value` -- mex recursion over successor positions;
* :func:`minimax_value` -- plain won/lost recursion that never looks at xor.

The dense variants (:func:`grundy_table`, :func:`minimax_table`) sweep every
position of a board at once and back the exhaustive checks.
"""
from __future__ import annotations

import enum
from functools import reduce
from operator import xor
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

from nimzero import kernels
from nimzero.game import MoveAction, NimBoard, all_positions, position_strides

WON = "won"
LOST = "lost"


def _heaps(position) -> tuple[int, ...]:
    if isinstance(position, NimBoard):
        return position.current
    return tuple(int(v) for v in position)


def nim_sum(position) -> int:
    return reduce(xor, _heaps(position), 0)


def mex(values: Iterable[int]) -> int:
    present = set(values)
    m = 0
    while m in present:
        m += 1
    return m


def nim_successors(position: tuple[int, ...]) -> Iterable[tuple[int, ...]]:
    for j, v in enumerate(position):
        for c in range(1, v + 1):
            yield position[:j] + (v - c,) + position[j + 1 :]


def nim_canonical(position: tuple[int, ...]) -> tuple[int, ...]:
    # Heap order and empty heaps do not change the game.
    return tuple(sorted(v for v in position if v))


class GrundyTable:
    """Memo of Grundy values keyed by a canonical form of the position."""

    def __init__(self, canonical: Callable[[tuple], Hashable] = nim_canonical):
        self.canonical = canonical
        self.memo: dict[Hashable, int] = {}

    def __len__(self):
        return len(self.memo)

    def __contains__(self, position):
        return self.canonical(_heaps(position)) in self.memo


_default_table = GrundyTable()


def grundy_value(position, table: GrundyTable | None = None,
                 successor_fn: Callable[[tuple], Iterable[tuple]] = nim_successors) -> int:
    """Sprague-Grundy value by mex recursion, memoised in ``table``.

    Uses an explicit stack so long positions cannot hit the recursion limit.
    """
    table = _default_table if table is None else table
    memo, canonical = table.memo, table.canonical
    root = _heaps(position)
    stack = [root]
    while stack:
        pos = stack[-1]
        key = canonical(pos)
        if key in memo:
            stack.pop()
            continue
        children = list(successor_fn(pos))
        pending = [s for s in children if canonical(s) not in memo]
        if pending:
            stack.extend(pending)
            continue
        memo[key] = mex(memo[canonical(s)] for s in children)
        stack.pop()
    return memo[canonical(root)]


_minimax_memo: dict[tuple[int, ...], bool] = {}


def minimax_value(position) -> str:
    """Won/lost for the player to move by exhaustive search.

    A position is won iff some move leads to a lost position. Deliberately
    independent of :func:`nim_sum`.
    """
    root = nim_canonical(_heaps(position))
    stack = [root]
    while stack:
        pos = stack[-1]
        if pos in _minimax_memo:
            stack.pop()
            continue
        children = [nim_canonical(s) for s in nim_successors(pos)]
        pending = [s for s in children if s not in _minimax_memo]
        if pending:
            stack.extend(pending)
            continue
        _minimax_memo[pos] = any(not _minimax_memo[s] for s in children)
        stack.pop()
    return WON if _minimax_memo[root] else LOST


def winning_moves(position) -> list[MoveAction]:
    """All moves to a zero nim-sum successor, in action order.

    Empty exactly when the position is lost for the player to move.
    """
    heaps = _heaps(position)
    total = nim_sum(heaps)
    if total == 0:
        return []
    return [MoveAction(j, v - (v ^ total)) for j, v in enumerate(heaps) if v ^ total < v]


class WinClass(enum.IntEnum):
    """Winning-move type of a position whose heaps all hold 0, 1 or 2.

    The three classes with a winning move carry the labels 0, 1, 2 used as
    classification targets; ``NO_WIN`` is kept out of datasets.
    """

    NO_WIN = -1
    TAKE_2_FROM_2 = 0
    TAKE_1_FROM_1 = 1
    TAKE_1_FROM_2 = 2

    @property
    def move_shape(self) -> tuple[int, int] | None:
        """``(heap size, counters removed)`` of the winning move."""
        return {
            WinClass.TAKE_2_FROM_2: (2, 2),
            WinClass.TAKE_1_FROM_1: (1, 1),
            WinClass.TAKE_1_FROM_2: (2, 1),
        }.get(self)


def winning_move_class(position) -> WinClass:
    heaps = _heaps(position)
    if any(v > 2 or v < 0 for v in heaps):
        raise ValueError(f"heaps must hold 0, 1 or 2 counters: {heaps}")
    odd_ones = heaps.count(1) % 2 == 1
    odd_twos = heaps.count(2) % 2 == 1
    if odd_ones and odd_twos:
        return WinClass.TAKE_1_FROM_2
    if odd_ones:
        return WinClass.TAKE_1_FROM_1
    if odd_twos:
        return WinClass.TAKE_2_FROM_2
    return WinClass.NO_WIN


def winning_move_classes(positions: np.ndarray) -> np.ndarray:
    """Vectorised :func:`winning_move_class` returning int labels (-1 = no win)."""
    positions = np.asarray(positions)
    if positions.size and (positions.min() < 0 or positions.max() > 2):
        raise ValueError("heaps must hold 0, 1 or 2 counters")
    odd_ones = (positions == 1).sum(axis=1) % 2 == 1
    odd_twos = (positions == 2).sum(axis=1) % 2 == 1
    labels = np.full(positions.shape[0], int(WinClass.NO_WIN), dtype=np.int64)
    labels[odd_twos & ~odd_ones] = WinClass.TAKE_2_FROM_2
    labels[odd_ones & ~odd_twos] = WinClass.TAKE_1_FROM_1
    labels[odd_ones & odd_twos] = WinClass.TAKE_1_FROM_2
    return labels


# ---------------------------------------------------------------------------
# dense sweeps over every position of a board


def nim_sum_table(initial: Sequence[int]) -> np.ndarray:
    return np.bitwise_xor.reduce(all_positions(initial), axis=1)


def grundy_table(initial: Sequence[int]) -> np.ndarray:
    caps = np.asarray(initial, dtype=np.int64)
    return kernels.grundy_dense(caps, position_strides(initial))


def minimax_table(initial: Sequence[int]) -> np.ndarray:
    """Boolean won-for-mover flag of every position, by position index."""
    caps = np.asarray(initial, dtype=np.int64)
    return kernels.minimax_dense(caps, position_strides(initial))
