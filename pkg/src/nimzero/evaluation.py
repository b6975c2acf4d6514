"""Elo pool, champion/expert measurements and single-position analysis."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from nimzero.agent import win_probability
from nimzero.game import (
    MoveAction,
    NimBoard,
    action_from_index,
    action_index,
    action_tables,
    apply_move,
    is_terminal,
    legal_moves,
    play_game,
    position_count,
    position_strides,
)
from nimzero.mcts import SearchConfig, posterior_policy, run_search
from nimzero.oracle import nim_sum, winning_moves

INITIAL_RATING = 1000.0


class EmptySample(ValueError):
    pass


# ---------------------------------------------------------------------------
# Elo


def expected_score(rating_a: float, rating_b: float) -> float:
    return 1.0 / (1.0 + 10.0 ** ((rating_b - rating_a) / 400.0))


def k_factor(matches_played: int, threshold=20, k_veteran=32.0, k_novice=16.0) -> float:
    # Larger steps for agents with more than `threshold` games behind them.
    return k_veteran if matches_played > threshold else k_novice


@dataclass
class RatedAgent:
    iteration: int
    checkpoint: str | None = None
    rating: float = INITIAL_RATING
    matches_played: int = 0
    player: Callable | None = field(default=None, repr=False, compare=False)


def update_rating(agent: RatedAgent, won: bool, expected: float, k: float | None = None) -> float:
    """Rating after one game; ``expected`` is the agent's pre-game expected score."""
    k = k_factor(agent.matches_played) if k is None else k
    return agent.rating + k * ((1.0 if won else 0.0) - expected)


@dataclass
class GameRecord:
    first: int  # pool indices
    second: int
    first_won: bool


class EloPool:
    """Archive of rated agents. ``player_for(agent)`` supplies the move
    function used in games; by default each agent's own ``player``."""

    def __init__(self, k_rule: Callable[[int], float] = k_factor,
                 player_for: Callable[[RatedAgent], Callable] | None = None):
        self.agents: list[RatedAgent] = []
        self.games: list[GameRecord] = []
        self.k_rule = k_rule
        self.player_for = player_for or (lambda agent: agent.player)

    def __len__(self):
        return len(self.agents)

    def total_rating(self) -> float:
        return sum(a.rating for a in self.agents)

    def record_game(self, a: RatedAgent, b: RatedAgent, a_won: bool):
        e_a = expected_score(a.rating, b.rating)
        e_b = 1.0 - e_a
        k_a, k_b = self.k_rule(a.matches_played), self.k_rule(b.matches_played)
        a.rating, b.rating = (update_rating(a, a_won, e_a, k_a),
                              update_rating(b, not a_won, e_b, k_b))
        a.matches_played += 1
        b.matches_played += 1

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["index", "iteration", "rating", "matches_played"])
        for i, a in enumerate(self.agents):
            writer.writerow([i, a.iteration, f"{a.rating:.4f}", a.matches_played])
        return out.getvalue()


def tournament_round(pool: EloPool, candidate: RatedAgent, initial: Sequence[int],
                     games_per_pairing=2, rng=None) -> EloPool:
    """Rate ``candidate`` against every archived agent, then archive it.

    Seats alternate within each pairing, the candidate moving first in the
    even-numbered games. Ratings update after every game, in pool order.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    me = len(pool.agents)
    cand_player = pool.player_for(candidate)
    for idx, opponent in enumerate(pool.agents):
        opp_player = pool.player_for(opponent)
        for g in range(games_per_pairing):
            cand_first = g % 2 == 0
            players = [cand_player, opp_player] if cand_first else [opp_player, cand_player]
            outcome = play_game(initial, players, rng)
            cand_won = (outcome.winner == 0) == cand_first
            pool.record_game(candidate, opponent, cand_won)
            first, second = (me, idx) if cand_first else (idx, me)
            pool.games.append(GameRecord(first, second, outcome.winner == 0))
    pool.agents.append(candidate)
    return pool


# ---------------------------------------------------------------------------
# players


def random_player(board: NimBoard, rng) -> MoveAction:
    moves = legal_moves(board)
    return moves[int(rng.integers(len(moves)))]


def perfect_player(board: NimBoard, rng) -> MoveAction:
    """A winning move when one exists, otherwise a uniformly random move."""
    wins = winning_moves(board)
    if wins:
        return wins[int(rng.integers(len(wins)))]
    return random_player(board, rng)


class SearchPlayer:
    """Plays the most-visited move of an evaluation-mode search."""

    def __init__(self, evaluator, config: SearchConfig | None = None):
        self.evaluator = evaluator
        self.config = (config or SearchConfig()).for_evaluation()

    def __call__(self, board: NimBoard, rng) -> MoveAction:
        result = run_search(board, self.evaluator, self.config, rng)
        return action_from_index(int(np.argmax(result.visits)), board.initial)


def as_player(agent, config: SearchConfig | None = None):
    if hasattr(agent, "evaluate"):
        return SearchPlayer(agent, config)
    return agent


# ---------------------------------------------------------------------------
# champion / expert metrics


@dataclass(frozen=True)
class AccuracyReport:
    policy_top1: float
    random_baseline: float
    value_sign: float
    sample_size: int
    board: tuple[int, ...]

    def format(self) -> str:
        rows = [
            ("board", ",".join(map(str, self.board))),
            ("positions", str(self.sample_size)),
            ("policy top-1 accuracy", f"{self.policy_top1:.4f}"),
            ("random policy baseline", f"{self.random_baseline:.4f}"),
            ("value sign accuracy", f"{self.value_sign:.4f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def evaluation_positions(capacities, sample=10000, rng=None, exhaustive_limit=10000) -> np.ndarray:
    """Every position when the board has at most ``exhaustive_limit`` of
    them, otherwise ``sample`` uniform draws excluding the empty board."""
    capacities = tuple(capacities)
    total = position_count(capacities)
    radix = np.asarray(capacities, np.int64) + 1
    if total <= exhaustive_limit:
        idx = np.arange(total, dtype=np.int64)
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        idx = rng.integers(1, total, size=sample)
    strides = position_strides(capacities)
    return (idx[:, None] // strides[None, :]) % radix[None, :]


def _winning_action_mask(capacities, positions):
    positions = np.asarray(positions, np.int64)
    heap_of, count_of = action_tables(capacities)
    xor = np.bitwise_xor.reduce(positions, axis=1)
    sizes = positions[:, heap_of]
    legal = count_of[None, :] <= sizes
    wins = legal & (((sizes - count_of[None, :]) ^ sizes ^ xor[:, None]) == 0) & (xor != 0)[:, None]
    return legal, wins


def policy_top1_accuracy(net, positions, capacities, rng=None) -> tuple[float, float]:
    """Share of won positions whose highest-prior move wins, and the share a
    uniformly random legal move would achieve. Lost positions are skipped.

    Exact ties for the top prior are broken uniformly at random, so a net
    with flat priors scores the baseline in expectation.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    positions = np.asarray(positions, np.int64).reshape(-1, len(capacities))
    legal, wins = _winning_action_mask(capacities, positions)
    won = wins.any(axis=1)
    if not won.any():
        raise EmptySample("no won positions in the sample")
    priors, _ = net.evaluate_positions(capacities, positions[won])
    top = priors == priors.max(axis=1, keepdims=True)
    noise = rng.random(top.shape)
    best = np.argmax(np.where(top, noise, -1.0), axis=1)
    hits = wins[won][np.arange(best.size), best]
    baseline = wins[won].sum(axis=1) / legal[won].sum(axis=1)
    return float(hits.mean()), float(baseline.mean())


def value_sign_accuracy(net, positions, capacities) -> float:
    """Share of positions where sign(v) matches won/lost; v == 0 is wrong."""
    positions = np.asarray(positions, np.int64).reshape(-1, len(capacities))
    if positions.shape[0] == 0:
        raise EmptySample("empty position sample")
    _, values = net.evaluate_positions(capacities, positions)
    won = np.bitwise_xor.reduce(positions, axis=1) != 0
    correct = np.where(won, values > 0, values < 0)
    return float(correct.mean())


def accuracy_report(net, capacities, positions) -> AccuracyReport:
    top1, baseline = policy_top1_accuracy(net, positions, capacities)
    return AccuracyReport(top1, baseline, value_sign_accuracy(net, positions, capacities),
                          int(len(positions)), tuple(capacities))


def champion_test(agent, capacities, games=200, config: SearchConfig | None = None, rng=None,
                  opponents=("random", "perfect")) -> dict[str, float]:
    """First-mover win rate from the full board against each opponent."""
    rng = np.random.default_rng(0) if rng is None else rng
    player = as_player(agent, config)
    known = {"random": random_player, "perfect": perfect_player}
    rates = {}
    for name in opponents:
        opponent = known[name]
        wins = sum(play_game(capacities, [player, opponent], rng).winner == 0 for _ in range(games))
        rates[name] = wins / games
    return rates


def expert_test(agent, positions, capacities, config: SearchConfig | None = None, rng=None) -> float:
    """Share of won positions where the agent's move keeps the win."""
    rng = np.random.default_rng(0) if rng is None else rng
    player = as_player(agent, config)
    boards = [NimBoard(tuple(capacities), tuple(int(v) for v in p)) for p in positions]
    boards = [b for b in boards if nim_sum(b) != 0]
    if not boards:
        raise EmptySample("no won positions in the sample")
    good = sum(nim_sum(apply_move(b, player(b, rng))) == 0 for b in boards)
    return good / len(boards)


# ---------------------------------------------------------------------------
# position analysis


@dataclass(frozen=True)
class MoveRow:
    move: str
    winning: bool
    prior: float
    value: float  # for the player making the move

    @property
    def win_probability(self) -> float:
        return win_probability(self.value)


@dataclass
class PositionAnalysis:
    board: NimBoard
    rows: list[MoveRow]
    winning: list[str]
    ladder: list[tuple[int, dict[str, float], str]]  # (sims, posterior of winning moves, top move)

    def format(self) -> str:
        lines = [f"position {self.board}  (winning moves: {', '.join(self.winning) or 'none'})"]
        header = ["move", "winning", "prior", "V-value", "win prob"]
        table = [[r.move, "yes" if r.winning else "no", f"{100 * r.prior:.1f}%",
                  f"{r.value:+.3f}", f"{100 * r.win_probability:.1f}%"] for r in self.rows]
        lines += _columns(header, table)
        if self.ladder:
            lines.append("")
            header = ["simulations", "most visited"] + [f"P({m})" for m in self.winning]
            table = [[str(s), top] + [f"{100 * post[m]:.1f}%" for m in self.winning]
                     for s, post, top in self.ladder]
            lines += _columns(header, table)
        return "\n".join(lines)


def _columns(header, rows):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return [fmt.format(*header)] + [fmt.format(*r) for r in rows]


def analyze_position(net, board: NimBoard, ladder=(64, 256, 1024, 65536), top_k=2,
                     config: SearchConfig | None = None, rng=None) -> PositionAnalysis:
    """Priors and successor values of the ``top_k`` moves, plus the search
    posterior on each winning move at every simulation count in ``ladder``."""
    rng = np.random.default_rng(0) if rng is None else rng
    config = (config or SearchConfig()).for_evaluation()
    ev = net.evaluate(board)
    order = np.argsort(-ev.priors, kind="stable")[:top_k]
    wins = {m.label for m in winning_moves(board)}
    rows = []
    for a in order:
        if ev.priors[a] <= 0:
            break
        move = action_from_index(int(a), board.initial)
        after = apply_move(board, move)
        value = 1.0 if is_terminal(after) else -net.evaluate(after).value
        rows.append(MoveRow(move.label, move.label in wins, float(ev.priors[a]), float(value)))
    winning = [m.label for m in winning_moves(board)]
    results = []
    for sims in ladder:
        res = run_search(board, net, replace(config, simulations=int(sims)), rng)
        assert res.total_visits == sims
        pi = posterior_policy(res.visits, 1.0)
        post = {m.label: float(pi[action_index(m, board.initial)]) for m in winning_moves(board)}
        top = action_from_index(int(np.argmax(res.visits)), board.initial).label
        results.append((int(sims), post, top))
    return PositionAnalysis(board, rows, winning, results)

