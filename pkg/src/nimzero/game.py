"""Nim rules, positions, action indexing and the unary token encoding.

A board is a fixed tuple of heap capacities (``initial``) plus the current
heap sizes. Heaps are indexed from 0 internally and labelled ``a, b, c, ...``
in human-readable output, so ``e9`` removes nine counters from heap 4.

Every position of a board also has a mixed-radix *position index* in
``[0, position_count(initial))``; removing counters always lowers it, which is
what the dense oracle tables and the evaluation caches rely on.
"""
from __future__ import annotations

import string
from dataclasses import dataclass
from math import prod
from typing import NamedTuple, Sequence

import numpy as np

SEPARATOR = -1

# int64 position indices
MAX_POSITIONS = 2**63 - 1


class IllegalMove(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class NimBoard:
    initial: tuple[int, ...]
    current: tuple[int, ...]

    def __post_init__(self):
        initial = tuple(int(n) for n in self.initial)
        current = tuple(int(v) for v in self.current)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "current", current)
        if not initial:
            raise ValueError("a board needs at least one heap")
        if len(current) != len(initial):
            raise ValueError(f"position {current} does not fit board {initial}")
        if any(n < 1 for n in initial):
            raise ValueError(f"heap capacities must be positive: {initial}")
        for v, n in zip(current, initial):
            if not 0 <= v <= n:
                raise ValueError(f"position {current} does not fit board {initial}")

    @classmethod
    def full(cls, initial: Sequence[int]) -> "NimBoard":
        return cls(tuple(initial), tuple(initial))

    @property
    def heaps(self) -> int:
        return len(self.initial)

    def __str__(self):
        return format_heaps(self.current)


@dataclass(frozen=True, order=True)
class MoveAction:
    heap: int
    count: int

    @property
    def label(self) -> str:
        return f"{heap_label(self.heap)}{self.count}"

    def __str__(self):
        return self.label


class GameOutcome(NamedTuple):
    winner: int  # 0 = first mover, 1 = second mover
    move_count: int


def heap_label(j: int) -> str:
    """Spreadsheet-style letters: 0 -> a, 25 -> z, 26 -> aa."""
    if j < 0:
        raise ValueError(j)
    letters = ""
    j += 1
    while j:
        j, r = divmod(j - 1, 26)
        letters = string.ascii_lowercase[r] + letters
    return letters


def parse_move(text: str) -> MoveAction:
    text = text.strip().lower()
    split = len(text.rstrip("0123456789"))
    letters, digits = text[:split], text[split:]
    if not letters or not digits or not letters.isalpha():
        raise ValueError(f"not a move: {text!r}")
    heap = 0
    for ch in letters:
        heap = heap * 26 + (ord(ch) - ord("a") + 1)
    return MoveAction(heap - 1, int(digits))


def parse_heaps(text: str) -> tuple[int, ...]:
    """Parse ``"1,3,5,7,9"`` (spaces and brackets tolerated)."""
    cleaned = text.strip().strip("[]()")
    if not cleaned:
        raise ValueError("empty heap list")
    try:
        heaps = tuple(int(part) for part in cleaned.split(","))
    except ValueError:
        raise ValueError(f"malformed heap list: {text!r}") from None
    if any(h < 0 for h in heaps):
        raise ValueError(f"negative heap in {text!r}")
    return heaps


def format_heaps(heaps: Sequence[int]) -> str:
    return ",".join(str(int(h)) for h in heaps)


def legal_moves(board: NimBoard) -> list[MoveAction]:
    return [MoveAction(j, c) for j, v in enumerate(board.current) for c in range(1, v + 1)]


def apply_move(board: NimBoard, move: MoveAction) -> NimBoard:
    if not 0 <= move.heap < board.heaps:
        raise IllegalMove(f"no heap {move.heap} on a {board.heaps}-heap board")
    if move.count < 1 or move.count > board.current[move.heap]:
        raise IllegalMove(
            f"cannot remove {move.count} from heap {heap_label(move.heap)} "
            f"holding {board.current[move.heap]}"
        )
    current = list(board.current)
    current[move.heap] -= move.count
    return NimBoard(board.initial, tuple(current))


def is_terminal(board: NimBoard) -> bool:
    return not any(board.current)


def encoded_length(initial: Sequence[int]) -> int:
    return sum(initial) + len(initial) - 1


def encode_state(board: NimBoard) -> np.ndarray:
    """Unary tokens: heap ``j`` is ``v_j`` ones then ``n_j - v_j`` zeros; heaps
    are separated by a single -1."""
    tokens = np.empty(encoded_length(board.initial), dtype=np.int8)
    pos = 0
    for j, (v, n) in enumerate(zip(board.current, board.initial)):
        if j:
            tokens[pos] = SEPARATOR
            pos += 1
        tokens[pos : pos + v] = 1
        tokens[pos + v : pos + n] = 0
        pos += n
    return tokens


def encode_positions(initial: Sequence[int], positions: np.ndarray) -> np.ndarray:
    """Vectorised :func:`encode_state` for an ``(m, k)`` array of heap sizes."""
    positions = np.asarray(positions)
    m = positions.shape[0]
    out = np.empty((m, encoded_length(initial)), dtype=np.int8)
    pos = 0
    for j, n in enumerate(initial):
        if j:
            out[:, pos] = SEPARATOR
            pos += 1
        out[:, pos : pos + n] = np.arange(n)[None, :] < positions[:, j : j + 1]
        pos += n
    return out


def position_count(initial: Sequence[int]) -> int:
    if any(n < 1 for n in initial):
        raise ValueError(f"heap capacities must be positive: {tuple(initial)}")
    count = prod(1 + int(n) for n in initial)
    if count > MAX_POSITIONS:
        raise OverflowError(f"{count} positions do not fit a 64-bit index")
    return count


def position_strides(initial: Sequence[int]) -> np.ndarray:
    k = len(initial)
    strides = np.ones(k, dtype=np.int64)
    for j in range(k - 2, -1, -1):
        strides[j] = strides[j + 1] * (initial[j + 1] + 1)
    return strides


def position_index(board: NimBoard) -> int:
    strides = position_strides(board.initial)
    return int(sum(int(v) * int(s) for v, s in zip(board.current, strides)))


def position_from_index(initial: Sequence[int], index: int) -> NimBoard:
    if not 0 <= index < position_count(initial):
        raise IndexOutOfRange(index)
    current = []
    for n, s in zip(initial, position_strides(initial)):
        current.append((index // int(s)) % (n + 1))
    return NimBoard(tuple(initial), tuple(current))


def all_positions(initial: Sequence[int]) -> np.ndarray:
    """Heap sizes of every position, row ``i`` having position index ``i``."""
    idx = np.arange(position_count(initial), dtype=np.int64)
    strides = position_strides(initial)
    radix = np.asarray(initial, dtype=np.int64) + 1
    return ((idx[:, None] // strides[None, :]) % radix[None, :]).astype(np.int64)


def positions_to_indices(initial: Sequence[int], positions: np.ndarray) -> np.ndarray:
    return np.asarray(positions, dtype=np.int64) @ position_strides(initial)


def action_space_size(initial: Sequence[int]) -> int:
    return int(sum(initial))


def action_offsets(initial: Sequence[int]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(initial)[:-1]]).astype(np.int64)


def action_index(move: MoveAction, initial: Sequence[int]) -> int:
    if not 0 <= move.heap < len(initial) or not 1 <= move.count <= initial[move.heap]:
        raise IndexOutOfRange(f"{move} is outside board {tuple(initial)}")
    return int(sum(initial[: move.heap])) + move.count - 1


def action_from_index(index: int, initial: Sequence[int]) -> MoveAction:
    if not 0 <= index < action_space_size(initial):
        raise IndexOutOfRange(f"action {index} outside [0, {action_space_size(initial)})")
    for heap, n in enumerate(initial):
        if index < n:
            return MoveAction(heap, index + 1)
        index -= n
    raise AssertionError("unreachable")


def action_tables(initial: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Heap and count of every action index, as two int64 arrays."""
    heap_of = np.repeat(np.arange(len(initial)), initial).astype(np.int64)
    count_of = np.concatenate([np.arange(1, n + 1) for n in initial]).astype(np.int64)
    return heap_of, count_of


def legal_mask(board: NimBoard) -> np.ndarray:
    heap_of, count_of = action_tables(board.initial)
    return count_of <= np.asarray(board.current, dtype=np.int64)[heap_of]


def play_game(initial: Sequence[int], players, rng) -> GameOutcome:
    """Play from the full board; ``players[i]`` is called as ``player(board, rng)``
    and must return a legal :class:`MoveAction`."""
    board = NimBoard.full(initial)
    ply = 0
    while not is_terminal(board):
        board = apply_move(board, players[ply % 2](board, rng))
        ply += 1
    return GameOutcome(winner=(ply - 1) % 2, move_count=ply)
