"""Monte Carlo tree search over nim positions.

Selection is ``argmax_a Q(s,a) + U(s,a)`` with the MuZero-style bonus

    U = P * sqrt(sum_b N(s,b)) / (1 + N(s,a)) * (c1 + log((sum_b N(s,b) + c2 + 1) / c2))

or, when ``c_puct`` is set, the older ``c_puct * P * sqrt(sum_b N) / (1 + N)``.
Values are negamax: a leaf value is for the player to move there and flips
sign at every ply on the way back up. A terminal node is worth -1 to the
player facing it.

Expanding the root is not a simulation, so after ``S`` simulations the root
visit counts sum to exactly ``S``.

Two search paths share the selection and backup kernels: a fused one that
runs entirely inside a compiled kernel against a whole-board
:class:`~nimzero.agent.TableEvaluator`, and a stepwise one that calls
``evaluator.evaluate`` for each new leaf. Both give identical visit counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from nimzero import kernels
from nimzero.agent import TableEvaluator, TerminalPosition
from nimzero.game import (
    MoveAction,
    NimBoard,
    action_from_index,
    action_tables,
    is_terminal,
    legal_mask,
    position_from_index,
    position_index,
    position_strides,
)


@dataclass(frozen=True)
class SearchConfig:
    simulations: int = 50
    c1: float = 0.25
    c2: float = 19652.0
    dirichlet_alpha: float = 0.35
    dirichlet_epsilon: float = 0.25
    temperature_plies: int = 3
    c_puct: float | None = None  # set to switch to the plain pUCT bonus
    reuse_tree: bool = False

    def __post_init__(self):
        if self.simulations < 1:
            raise ValueError(f"simulations must be >= 1, got {self.simulations}")
        if not 0.0 <= self.dirichlet_epsilon <= 1.0:
            raise ValueError(f"dirichlet_epsilon must lie in [0, 1], got {self.dirichlet_epsilon}")
        if not self.dirichlet_alpha > 0:
            raise ValueError(f"dirichlet_alpha must be positive, got {self.dirichlet_alpha}")
        if self.c2 <= 0:
            raise ValueError(f"c2 must be positive, got {self.c2}")
        if self.temperature_plies < 0:
            raise ValueError("temperature_plies must be non-negative")

    @property
    def use_puct(self) -> bool:
        return self.c_puct is not None

    def for_evaluation(self) -> "SearchConfig":
        """Same search without root noise."""
        return replace(self, dirichlet_epsilon=0.0)

    def temperature(self, ply: int) -> float:
        return 1.0 if ply < self.temperature_plies else 0.0


def u_term(prior, visits, parent_total, c1=0.25, c2=19652.0):
    return prior * math.sqrt(parent_total) / (1 + visits) * (c1 + math.log((parent_total + c2 + 1) / c2))


def u_term_puct(prior, visits, parent_total, c_puct):
    return c_puct * prior * math.sqrt(parent_total) / (1 + visits)


class SearchTree:
    """Edge statistics for every expanded node, stored as dense arrays.

    Row ``i`` holds node ``i``'s edges over the whole action space; node 0 is
    the root. ``child[i, a]`` is -1 until the edge is first traversed.
    """

    def __init__(self, capacities, capacity=64):
        self.capacities = tuple(capacities)
        self.strides = position_strides(self.capacities)
        self.heap_of, self.count_of = action_tables(self.capacities)
        A = self.heap_of.size
        self.N = np.zeros((capacity, A), np.int64)
        self.W = np.zeros((capacity, A), np.float64)
        self.P = np.zeros((capacity, A), np.float64)
        self.child = np.full((capacity, A), -1, np.int64)
        self.legal = np.zeros((capacity, A), bool)
        self.terminal = np.zeros(capacity, bool)
        self.node_pos = np.zeros(capacity, np.int64)
        self.raw_root_priors = None
        self.root_value = 0.0
        self.size = 0

    def reserve(self, extra):
        need = self.size + extra
        cap = self.N.shape[0]
        if need <= cap:
            return
        new_cap = max(need, 2 * cap)
        for name in ("N", "W", "P", "child", "legal", "terminal", "node_pos"):
            old = getattr(self, name)
            grown = np.full((new_cap,) + old.shape[1:], -1 if name == "child" else 0, old.dtype)
            grown[:cap] = old
            setattr(self, name, grown)

    def add_node(self, pos: int) -> int:
        self.reserve(1)
        m = self.size
        self.size += 1
        self.node_pos[m] = pos
        self.legal[m] = self.count_of <= (pos // self.strides[self.heap_of]) % (
            np.asarray(self.capacities)[self.heap_of] + 1
        )
        self.terminal[m] = not self.legal[m].any()
        return m

    def board(self, node: int) -> NimBoard:
        return position_from_index(self.capacities, int(self.node_pos[node]))

    def q(self, node: int) -> np.ndarray:
        n = self.N[node]
        return np.where(n > 0, self.W[node] / np.maximum(n, 1), 0.0)

    def child_position(self, node: int, action: int) -> int:
        return int(self.node_pos[node] - self.count_of[action] * self.strides[self.heap_of[action]])

    def advance(self, action: int) -> "SearchTree | None":
        """The subtree under ``action`` as a fresh tree, or None if unexpanded."""
        start = int(self.child[0, action])
        if start < 0 or self.terminal[start]:
            return None
        order, remap = [start], {start: 0}
        for node in order:
            for c in self.child[node][self.child[node] >= 0]:
                if int(c) not in remap:
                    remap[int(c)] = len(order)
                    order.append(int(c))
        sub = SearchTree(self.capacities, len(order))
        idx = np.asarray(order)
        for name in ("N", "W", "P", "legal", "terminal", "node_pos"):
            getattr(sub, name)[:] = getattr(self, name)[idx]
        lookup = np.full(self.size, -1, np.int64)
        lookup[idx] = np.arange(len(order))
        kids = self.child[idx]
        sub.child[:] = np.where(kids >= 0, lookup[np.maximum(kids, 0)], -1)
        sub.raw_root_priors = sub.P[0].copy()
        sub.size = len(order)
        return sub


def select_child(tree: SearchTree, node: int, config: SearchConfig) -> MoveAction:
    """Argmax of Q + U over the legal edges of an expanded node, lowest index on ties."""
    n = tree.N[node]
    total = int(n.sum())
    if config.use_puct:
        u = np.array([u_term_puct(p, k, total, config.c_puct) for p, k in zip(tree.P[node], n)])
    else:
        u = np.array([u_term(p, k, total, config.c1, config.c2) for p, k in zip(tree.P[node], n)])
    scores = np.where(tree.legal[node], tree.q(node) + u, -np.inf)
    return action_from_index(int(np.argmax(scores)), tree.capacities)


def apply_root_noise(priors, legal, config: SearchConfig, rng) -> np.ndarray:
    """Mix a Dirichlet sample over the legal actions into ``priors``.

    No random numbers are drawn when epsilon is 0.
    """
    priors = np.asarray(priors, dtype=np.float64)
    eps = config.dirichlet_epsilon
    if eps == 0:
        return priors.copy()
    legal = np.asarray(legal, dtype=bool)
    eta = np.zeros_like(priors)
    eta[legal] = rng.dirichlet(np.full(int(legal.sum()), config.dirichlet_alpha))
    return (1 - eps) * priors + eps * eta


@dataclass
class SearchResult:
    visits: np.ndarray  # per action, over the whole action space
    root_value: float  # mean backed-up value for the player to move
    prior_value: float  # the evaluator's value at the root
    tree: SearchTree | None = None

    @property
    def total_visits(self) -> int:
        return int(self.visits.sum())


def run_search(root: NimBoard, net, config: SearchConfig, rng=None,
               tree: SearchTree | None = None) -> SearchResult:
    """Run ``config.simulations`` simulations from ``root``.

    ``net`` is any evaluator. A :class:`TableEvaluator` holding the whole board
    takes the fused path unless ``config.reuse_tree`` asks for the tree back.
    ``tree`` is a subtree from a previous move's search to continue from.
    """
    if is_terminal(root):
        raise TerminalPosition(f"cannot search from terminal position {root}")
    rng = np.random.default_rng() if rng is None else rng
    if isinstance(net, TableEvaluator) and not config.reuse_tree and tree is None:
        table = net.full_table()
        if table is not None:
            return _search_fused(root, net, table, config, rng)
    return _search_stepwise(root, net, config, rng, tree)


def _search_fused(root, table_eval, table, config, rng):
    prior_table, value_table = table
    pos = position_index(root)
    raw = prior_table[pos].astype(np.float64)
    priors = apply_root_noise(raw, legal_mask(root), config, rng)
    heap_of, count_of = action_tables(root.initial)
    visits, values = kernels.search_table(
        prior_table, value_table, pos, priors, np.asarray(root.initial, np.int64),
        table_eval.strides, heap_of, count_of, config.simulations, config.c1, config.c2,
        0.0 if config.c_puct is None else config.c_puct, config.use_puct,
    )
    return SearchResult(visits, float(values.sum() / visits.sum()), float(value_table[pos]))


def _search_stepwise(root, net, config, rng, tree):
    pos = position_index(root)
    if tree is None or tree.size == 0 or tree.node_pos[0] != pos:
        tree = SearchTree(root.initial, config.simulations + 1)
        tree.add_node(pos)
        ev = net.evaluate(root)
        tree.raw_root_priors = np.asarray(ev.priors, np.float64)
        tree.root_value = ev.value
    tree.reserve(config.simulations)
    tree.P[0] = apply_root_noise(tree.raw_root_priors, tree.legal[0], config, rng)
    depth_cap = sum(root.initial) + 1
    path_nodes = np.zeros(depth_cap, np.int64)
    path_actions = np.zeros(depth_cap, np.int64)
    c_puct = 0.0 if config.c_puct is None else config.c_puct
    start = tree.N[0].copy()
    for _ in range(config.simulations):
        depth, leaf = kernels.select_path(tree.N, tree.W, tree.P, tree.child, tree.legal,
                                          tree.terminal, 0, config.c1, config.c2, c_puct,
                                          config.use_puct, path_nodes, path_actions)
        if leaf >= 0:
            value = -1.0
        else:
            parent, a = path_nodes[depth - 1], path_actions[depth - 1]
            m = tree.add_node(tree.child_position(parent, a))
            tree.child[parent, a] = m
            if tree.terminal[m]:
                value = -1.0
            else:
                ev = net.evaluate(tree.board(m))
                tree.P[m] = ev.priors
                value = float(ev.value)
        kernels.backup(tree.N, tree.W, path_nodes, path_actions, depth, value)
    visits = tree.N[0] - start
    n = tree.N[0].sum()
    return SearchResult(visits, float(tree.W[0].sum() / n), float(tree.root_value), tree)


def posterior_policy(visits, tau: float) -> np.ndarray:
    """Visit counts shaped by temperature: proportional at 1, one-hot at 0."""
    visits = np.asarray(visits, dtype=np.float64)
    if visits.sum() <= 0:
        raise ValueError("posterior needs at least one visit")
    if tau == 0:
        pi = np.zeros_like(visits)
        pi[int(np.argmax(visits))] = 1.0
        return pi
    # Normalise before exponentiating to keep N**(1/tau) finite for small tau.
    scaled = (visits / visits.max()) ** (1.0 / tau)
    return scaled / scaled.sum()


def choose_action(pi: np.ndarray, tau: float, rng) -> int:
    if tau == 0:
        return int(np.argmax(pi))
    return int(rng.choice(pi.size, p=pi))
