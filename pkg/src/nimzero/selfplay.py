"""Self-play episodes, the replay window and the training loop."""
from __future__ import annotations

import csv
import math
import time
from collections import OrderedDict, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from nimzero import seeding
from nimzero.agent import PolicyValueNet, TableEvaluator
from nimzero.evaluation import (
    EloPool,
    RatedAgent,
    SearchPlayer,
    evaluation_positions,
    k_factor,
    policy_top1_accuracy,
    tournament_round,
    value_sign_accuracy,
)
from nimzero.game import (
    NimBoard,
    action_from_index,
    action_space_size,
    apply_move,
    encode_state,
    is_terminal,
)
from nimzero.mcts import SearchConfig, choose_action, posterior_policy, run_search
from nimzero.nn.core import mse_loss, softmax_cross_entropy
from nimzero.nn.optim import Adam

METRIC_COLUMNS = [
    "iteration", "elo", "policy_top1_accuracy", "random_policy_baseline", "value_sign_accuracy",
    "policy_loss", "value_loss", "mean_episode_length", "wall_seconds",
]

DEFAULT_SIMULATIONS = {5: 50, 6: 60, 7: 100}


@dataclass(frozen=True)
class TrainConfig:
    board: tuple[int, ...] = (1, 3, 5, 7, 9)
    iterations: int = 500
    episodes_per_iteration: int = 100
    simulations: int | None = None  # None picks 50/60/100 by heap count
    batch_size: int = 128
    replay_window: int = 5
    batches_per_iteration: int | None = None  # None = one epoch over the newest iteration
    learning_rate: float = 1e-3
    max_grad_norm: float | None = None
    hidden_size: int = 128
    layers: int = 1
    workers: int = 8
    seed: int = 0
    c1: float = 0.25
    c2: float = 19652.0
    dirichlet_alpha: float = 0.35
    dirichlet_epsilon: float = 0.25
    temperature_plies: int = 3
    c_puct: float | None = None
    reuse_tree: bool = False
    elo_every: int = 1  # 0 disables the tournament
    games_per_pairing: int = 2
    k_threshold: int = 20
    k_veteran: float = 32.0
    k_novice: float = 16.0
    eval_sample: int = 10000
    elo_cache_mb: float = 1024.0

    def __post_init__(self):
        object.__setattr__(self, "board", tuple(int(n) for n in self.board))
        if self.simulations is None:
            object.__setattr__(self, "simulations", DEFAULT_SIMULATIONS.get(len(self.board), 50))
        for name in ("episodes_per_iteration", "simulations", "batch_size", "replay_window",
                     "workers", "hidden_size", "layers", "games_per_pairing"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        self.search  # validates the search fields

    @property
    def search(self) -> SearchConfig:
        return SearchConfig(self.simulations, self.c1, self.c2, self.dirichlet_alpha,
                            self.dirichlet_epsilon, self.temperature_plies, self.c_puct,
                            self.reuse_tree)

    def k_rule(self, matches_played):
        return k_factor(matches_played, self.k_threshold, self.k_veteran, self.k_novice)


@dataclass
class EpisodeStep:
    state: np.ndarray  # encoded tokens
    posterior: np.ndarray
    mover: int  # 0 for the first player
    action: int


@dataclass
class Episode:
    steps: list[EpisodeStep]
    winner: int

    def __len__(self):
        return len(self.steps)

    def reward(self, step: EpisodeStep) -> float:
        return 1.0 if step.mover == self.winner else -1.0

    def arrays(self):
        states = np.stack([s.state for s in self.steps])
        policies = np.stack([s.posterior for s in self.steps]).astype(np.float32)
        rewards = np.array([self.reward(s) for s in self.steps], dtype=np.float32)
        return states, policies, rewards


def play_episode(net, config: TrainConfig, rng) -> Episode:
    """One self-play game from the full board with training-mode search.

    The stored posterior is the one the move was drawn from: visit
    proportions on the first ``temperature_plies`` plies, one-hot after.
    """
    search = config.search
    board = NimBoard.full(config.board)
    steps, tree, ply = [], None, 0
    while not is_terminal(board):
        result = run_search(board, net, search, rng, tree)
        tau = search.temperature(ply)
        pi = posterior_policy(result.visits, tau)
        a = choose_action(pi, tau, rng)
        steps.append(EpisodeStep(encode_state(board), pi, ply % 2, a))
        tree = result.tree.advance(a) if search.reuse_tree and result.tree is not None else None
        board = apply_move(board, action_from_index(a, config.board))
        ply += 1
    return Episode(steps, (ply - 1) % 2)


# ---------------------------------------------------------------------------
# parallel generation

_worker = {}


def _snapshot(evaluator):
    if isinstance(evaluator, TableEvaluator):
        table = evaluator.full_table()
        if table is not None:
            return ("table", evaluator.capacities, table)
        evaluator = evaluator.source
    if isinstance(evaluator, PolicyValueNet):
        return ("net", evaluator.capacities, (evaluator.hidden_size, evaluator.layers),
                evaluator.get_flat())
    return ("object", None, evaluator)


def _restore(snapshot):
    kind, capacities, payload = snapshot[:3]
    if kind == "table":
        table = TableEvaluator(None, capacities)
        table._pages[0] = payload
        return table
    if kind == "net":
        hidden, layers = payload
        net = PolicyValueNet(capacities, hidden, layers, np.random.default_rng(0))
        net.set_flat(snapshot[3])
        return TableEvaluator(net, capacities)
    return payload


def _init_worker(snapshot, config):
    _worker["evaluator"] = _restore(snapshot)
    _worker["config"] = config


def _worker_play(job):
    iteration, episode = job
    rng = seeding.stream(_worker["config"].seed, seeding.SELFPLAY, iteration, episode)
    try:
        return play_episode(_worker["evaluator"], _worker["config"], rng)
    except Exception as exc:
        raise RuntimeError(f"self-play worker failed on episode {episode}: {exc!r}") from exc


def generate_episodes(net, config: TrainConfig, iteration=0, workers: int | None = None) -> list[Episode]:
    """``episodes_per_iteration`` games, in episode order.

    Each episode has its own random stream keyed by (seed, iteration,
    episode), so the result does not depend on the worker count.
    """
    workers = config.workers if workers is None else workers
    jobs = [(iteration, e) for e in range(config.episodes_per_iteration)]
    if workers <= 1:
        _init_worker(("object", None, net), config)
        try:
            return [_worker_play(job) for job in jobs]
        finally:
            _worker.clear()
    chunk = max(1, math.ceil(len(jobs) / (4 * workers)))
    with ProcessPoolExecutor(workers, initializer=_init_worker,
                             initargs=(_snapshot(net), config)) as pool:
        return list(pool.map(_worker_play, jobs, chunksize=chunk))


# ---------------------------------------------------------------------------
# replay and training


class ReplayBuffer:
    """Steps from the most recent ``window`` iterations."""

    def __init__(self, window=5):
        self.window = window
        self._chunks: deque = deque(maxlen=window)

    def add(self, episodes: Sequence[Episode]):
        if not episodes:
            return
        parts = [ep.arrays() for ep in episodes]
        self._chunks.append(tuple(np.concatenate(col) for col in zip(*parts)) + (len(episodes),))

    def __len__(self):
        return sum(c[0].shape[0] for c in self._chunks)

    @property
    def episode_count(self):
        return sum(c[3] for c in self._chunks)

    @property
    def newest_size(self):
        return self._chunks[-1][0].shape[0] if self._chunks else 0

    def arrays(self):
        return tuple(np.concatenate([c[i] for c in self._chunks]) for i in range(3))

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"replay_chunks": np.array(len(self._chunks))}
        for i, (s, p, r, n) in enumerate(self._chunks):
            out.update({f"replay{i}_s": s, f"replay{i}_p": p, f"replay{i}_r": r,
                        f"replay{i}_n": np.array(n)})
        return out

    def load_state_arrays(self, arrays):
        self._chunks.clear()
        for i in range(int(arrays["replay_chunks"])):
            self._chunks.append((arrays[f"replay{i}_s"], arrays[f"replay{i}_p"],
                                 arrays[f"replay{i}_r"], int(arrays[f"replay{i}_n"])))


@dataclass(frozen=True)
class IterationMetrics:
    policy_loss: float
    value_loss: float
    batches: int


def train_step(net: PolicyValueNet, optimizer: Adam, states, policies, rewards):
    optimizer.zero_grad()
    logits, values = net.forward(states, train=True)
    p_loss, g_logits = softmax_cross_entropy(logits.astype(np.float64), policies)
    v_loss, g_values = mse_loss(values, rewards)
    net.backward(g_logits, g_values)
    optimizer.step()
    return p_loss, v_loss


def training_iteration(net: PolicyValueNet, optimizer: Adam, buffer: ReplayBuffer,
                       config: TrainConfig, rng) -> IterationMetrics:
    """Minibatches of (s, pi, r) drawn from the whole window; cross entropy on
    the policy plus squared error on the value, one Adam step per batch."""
    if len(buffer) == 0:
        raise ValueError("replay buffer is empty")
    states, policies, rewards = buffer.arrays()
    n_batches = config.batches_per_iteration or math.ceil(buffer.newest_size / config.batch_size)
    size = min(config.batch_size, len(states))
    p_total = v_total = 0.0
    for _ in range(n_batches):
        idx = rng.choice(len(states), size=size, replace=False)
        p_loss, v_loss = train_step(net, optimizer, states[idx], policies[idx], rewards[idx])
        p_total += p_loss
        v_total += v_loss
    return IterationMetrics(p_total / n_batches, v_total / n_batches, n_batches)


# ---------------------------------------------------------------------------
# the full loop


def checkpoint_path(out_dir: Path, iteration: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"iter_{iteration:04d}.nimz"


class _TableCache:
    """Evaluation tables of archived agents, least recently used first out."""

    def __init__(self, capacities, budget_bytes):
        self.capacities = capacities
        self.budget = budget_bytes
        self.tables: OrderedDict[int, TableEvaluator] = OrderedDict()
        per_table = 4 * (action_space_size(capacities) + 1) * min(
            math.prod(n + 1 for n in capacities), 1 << 16)
        self.max_tables = max(2, int(budget_bytes // per_table))

    def put(self, iteration, table):
        self.tables[iteration] = table
        self.tables.move_to_end(iteration)
        while len(self.tables) > self.max_tables:
            self.tables.popitem(last=False)

    def get(self, agent: RatedAgent, search: SearchConfig):
        table = self.tables.get(agent.iteration)
        if table is None:
            table = TableEvaluator(PolicyValueNet.load(agent.checkpoint, self.capacities),
                                   self.capacities)
            self.put(agent.iteration, table)
        else:
            self.tables.move_to_end(agent.iteration)
        return SearchPlayer(table, search)


@dataclass
class TrainingRun:
    out_dir: Path
    net: PolicyValueNet
    metrics: list[dict] = field(default_factory=list)
    pool: EloPool | None = None


def _metric_row(values: dict) -> list[str]:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)
    return [fmt(values[c]) for c in METRIC_COLUMNS]


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def full_training_loop(config: TrainConfig, out_dir, resume=False, log=None) -> TrainingRun:
    """Self-play, train, evaluate and checkpoint for ``config.iterations`` rounds.

    Writes ``checkpoints/iter_NNNN.nimz`` (iteration 0 is the initial net),
    ``metrics.csv``, ``elo.csv`` and ``state.npz``, which holds everything
    else needed to resume: optimizer moments, the replay window and the pool.
    """
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    state_path = out_dir / "state.npz"
    board = config.board
    search = config.search

    net = PolicyValueNet(board, config.hidden_size, config.layers,
                         seeding.stream(config.seed, seeding.INIT))
    optimizer = Adam(net.named_params(), lr=config.learning_rate,
                     max_grad_norm=config.max_grad_norm)
    buffer = ReplayBuffer(config.replay_window)
    tables = _TableCache(board, config.elo_cache_mb * 2**20)
    pool = EloPool(config.k_rule, lambda agent: tables.get(agent, search))
    eval_positions = evaluation_positions(board, config.eval_sample,
                                          seeding.stream(config.seed, seeding.EVAL))
    run = TrainingRun(out_dir, net, pool=pool)

    start = 0
    if resume and state_path.exists():
        with np.load(state_path) as state:
            start = int(state["iteration"])
            optimizer.load_state_arrays(state)
            buffer.load_state_arrays(state)
            for it, rating, played in zip(state["pool_iteration"], state["pool_rating"],
                                          state["pool_matches"]):
                pool.agents.append(RatedAgent(int(it), str(checkpoint_path(out_dir, int(it))),
                                              float(rating), int(played)))
        net.set_flat(PolicyValueNet.load(checkpoint_path(out_dir, start), board).get_flat())
        run.metrics = read_metrics(metrics_path) if metrics_path.exists() else []
    else:
        net.save(checkpoint_path(out_dir, 0))
        with open(metrics_path, "w", newline="") as fh:
            csv.writer(fh).writerow(METRIC_COLUMNS)
        if config.elo_every:
            tournament_round(pool, RatedAgent(0, str(checkpoint_path(out_dir, 0))), board)
        _save_state(state_path, 0, optimizer, buffer, pool)

    table = TableEvaluator(net.copy(), board)
    for it in range(start + 1, config.iterations + 1):
        t0 = time.perf_counter()
        episodes = generate_episodes(table, config, it)
        buffer.add(episodes)
        m = training_iteration(net, optimizer, buffer, config,
                               seeding.stream(config.seed, seeding.TRAIN, it))
        ckpt = checkpoint_path(out_dir, it)
        net.save(ckpt)
        table = TableEvaluator(net.copy(), board)

        elo = None
        if config.elo_every and it % config.elo_every == 0:
            tables.put(it, table)
            candidate = RatedAgent(it, str(ckpt))
            tournament_round(pool, candidate, board, config.games_per_pairing,
                             seeding.stream(config.seed, seeding.ELO, it))
            elo = candidate.rating
        scorer = table if table.is_single_page else table.source
        top1, baseline = policy_top1_accuracy(scorer, eval_positions, board,
                                              seeding.stream(config.seed, seeding.EVAL, it))
        row = {
            "iteration": it,
            "elo": elo,
            "policy_top1_accuracy": top1,
            "random_policy_baseline": baseline,
            "value_sign_accuracy": value_sign_accuracy(scorer, eval_positions, board),
            "policy_loss": m.policy_loss,
            "value_loss": m.value_loss,
            "mean_episode_length": float(np.mean([len(e) for e in episodes])),
            "wall_seconds": time.perf_counter() - t0,
        }
        with open(metrics_path, "a", newline="") as fh:
            csv.writer(fh).writerow(_metric_row(row))
        (out_dir / "elo.csv").write_text(pool.to_csv())
        _save_state(state_path, it, optimizer, buffer, pool)
        run.metrics.append(row)
        if log is not None:
            log(row)
    return run


def _save_state(path: Path, iteration, optimizer, buffer, pool):
    arrays = {"iteration": np.array(iteration)}
    arrays.update(optimizer.state_arrays())
    arrays.update(buffer.state_arrays())
    arrays["pool_iteration"] = np.array([a.iteration for a in pool.agents], dtype=np.int64)
    arrays["pool_rating"] = np.array([a.rating for a in pool.agents], dtype=np.float64)
    arrays["pool_matches"] = np.array([a.matches_played for a in pool.agents], dtype=np.int64)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)


__all__ = [
    "Episode", "EpisodeStep", "IterationMetrics", "METRIC_COLUMNS", "ReplayBuffer", "TrainConfig",
    "TrainingRun", "checkpoint_path", "full_training_loop", "generate_episodes", "play_episode",
    "read_metrics", "training_iteration",
]
