"""Hot numeric kernels, each in a numba loop flavour and a numpy flavour.

The public names at the bottom of the module are bound to one flavour at
import time (see :mod:`nimzero._accel`). The ``*_loop`` / ``*_numpy`` pairs
are kept public for cross-checking and benchmarking.

Position indices are mixed-radix (see :func:`nimzero.game.position_strides`);
the all-empty position has index 0 and every move lowers the index, so
dynamic programmes over positions can run in increasing index order.
"""
import math

import numpy as np

from nimzero._accel import njit, pick


# ---------------------------------------------------------------------------
# exhaustive oracle tables


@njit
def grundy_dense_loop(capacities, strides):
    k = capacities.shape[0]
    total = 1
    moves = 0
    for j in range(k):
        total *= capacities[j] + 1
        moves += capacities[j]
    g = np.zeros(total, np.int64)
    seen = np.zeros(moves + 2, np.bool_)
    for idx in range(total):
        for j in range(k):
            v = (idx // strides[j]) % (capacities[j] + 1)
            for c in range(1, v + 1):
                seen[g[idx - c * strides[j]]] = True
        mex = 0
        while seen[mex]:
            mex += 1
        g[idx] = mex
        seen[:] = False
    return g


@njit
def minimax_dense_loop(capacities, strides):
    k = capacities.shape[0]
    total = 1
    for j in range(k):
        total *= capacities[j] + 1
    won = np.zeros(total, np.bool_)
    for idx in range(total):
        found = False
        for j in range(k):
            v = (idx // strides[j]) % (capacities[j] + 1)
            for c in range(1, v + 1):
                if not won[idx - c * strides[j]]:
                    found = True
                    break
            if found:
                break
        won[idx] = found
    return won


def _levels(capacities, strides):
    """Positions grouped by counters left; successors live in lower levels."""
    total = int(np.prod(capacities + 1))
    idx = np.arange(total, dtype=np.int64)
    pos = (idx[:, None] // strides[None, :]) % (capacities[None, :] + 1)
    level = pos.sum(axis=1)
    order = np.argsort(level, kind="stable")
    bounds = np.searchsorted(level[order], np.arange(int(capacities.sum()) + 2))
    heap_of = np.repeat(np.arange(capacities.shape[0]), capacities)
    count_of = np.concatenate([np.arange(1, n + 1) for n in capacities])
    offsets = count_of * strides[heap_of]
    return total, pos, order, bounds, heap_of, count_of, offsets


def grundy_dense_numpy(capacities, strides):
    capacities = np.asarray(capacities, dtype=np.int64)
    strides = np.asarray(strides, dtype=np.int64)
    total, pos, order, bounds, heap_of, count_of, offsets = _levels(capacities, strides)
    g = np.zeros(total, np.int64)
    width = offsets.shape[0] + 2
    for lvl in range(1, bounds.shape[0] - 1):
        ids = order[bounds[lvl] : bounds[lvl + 1]]
        if ids.size == 0:
            continue
        legal = count_of[None, :] <= pos[ids][:, heap_of]
        rows, cols = np.nonzero(legal)
        succ = ids[rows] - offsets[cols]
        present = np.zeros((ids.size, width), dtype=bool)
        present[rows, g[succ]] = True
        g[ids] = np.argmin(present, axis=1)
    return g


def minimax_dense_numpy(capacities, strides):
    capacities = np.asarray(capacities, dtype=np.int64)
    strides = np.asarray(strides, dtype=np.int64)
    total, pos, order, bounds, heap_of, count_of, offsets = _levels(capacities, strides)
    won = np.zeros(total, dtype=bool)
    for lvl in range(1, bounds.shape[0] - 1):
        ids = order[bounds[lvl] : bounds[lvl + 1]]
        if ids.size == 0:
            continue
        legal = count_of[None, :] <= pos[ids][:, heap_of]
        succ = np.where(legal, ids[:, None] - offsets[None, :], 0)
        won[ids] = np.any(legal & ~won[succ], axis=1)
    return won


# ---------------------------------------------------------------------------
# tree search
#
# A tree is a set of parallel arrays indexed by node: N (int64 visits),
# W (float64 summed value), P (float64 priors) and child (int64, -1 when the
# edge has not been expanded), each shaped (nodes, actions), plus ``legal``
# (bool, same shape) and ``terminal`` (bool, per node).


@njit
def select_path_loop(N, W, P, child, legal, terminal, root, c1, c2, c_puct, use_puct,
                     path_nodes, path_actions):
    """Walk from ``root`` by argmax(Q + U).

    Returns ``(depth, leaf)``: ``leaf`` is the terminal node reached, or -1
    when the last recorded edge still has to be expanded.
    """
    A = N.shape[1]
    node = root
    depth = 0
    while True:
        if terminal[node]:
            return depth, node
        total = 0
        for a in range(A):
            total += N[node, a]
        sq = math.sqrt(total)
        if use_puct:
            factor = c_puct
        else:
            factor = c1 + math.log((total + c2 + 1.0) / c2)
        best = -np.inf
        best_a = -1
        for a in range(A):
            if not legal[node, a]:
                continue
            n = N[node, a]
            q = W[node, a] / n if n > 0 else 0.0
            u = P[node, a] * sq / (1.0 + n) * factor
            s = q + u
            if s > best:
                best = s
                best_a = a
        path_nodes[depth] = node
        path_actions[depth] = best_a
        depth += 1
        nxt = child[node, best_a]
        if nxt < 0:
            return depth, -1
        node = nxt


def select_path_numpy(N, W, P, child, legal, terminal, root, c1, c2, c_puct, use_puct,
                      path_nodes, path_actions):
    node = root
    depth = 0
    while True:
        if terminal[node]:
            return depth, node
        n = N[node]
        total = n.sum()
        sq = math.sqrt(total)
        factor = c_puct if use_puct else c1 + math.log((total + c2 + 1.0) / c2)
        q = np.where(n > 0, W[node] / np.maximum(n, 1), 0.0)
        u = P[node] * sq / (1.0 + n) * factor
        best_a = int(np.argmax(np.where(legal[node], q + u, -np.inf)))
        path_nodes[depth] = node
        path_actions[depth] = best_a
        depth += 1
        nxt = child[node, best_a]
        if nxt < 0:
            return depth, -1
        node = nxt


@njit
def backup_loop(N, W, path_nodes, path_actions, depth, leaf_value):
    # leaf_value is for the player to move at the leaf; its parent edge
    # belongs to the opponent.
    val = -leaf_value
    for d in range(depth - 1, -1, -1):
        N[path_nodes[d], path_actions[d]] += 1
        W[path_nodes[d], path_actions[d]] += val
        val = -val


def backup_numpy(N, W, path_nodes, path_actions, depth, leaf_value):
    nodes = path_nodes[:depth]
    acts = path_actions[:depth]
    signs = np.where((depth - 1 - np.arange(depth)) % 2 == 0, -1.0, 1.0)
    N[nodes, acts] += 1
    W[nodes, acts] += signs * leaf_value


@njit
def _decode_legal(pos, capacities, strides, heap_of, count_of, out):
    any_legal = False
    for a in range(heap_of.shape[0]):
        j = heap_of[a]
        v = (pos // strides[j]) % (capacities[j] + 1)
        out[a] = count_of[a] <= v
        any_legal = any_legal or out[a]
    return any_legal


@njit
def search_table_loop(prior_table, value_table, root_pos, root_priors, capacities,
                      strides, heap_of, count_of, sims, c1, c2, c_puct, use_puct):
    """Complete search against precomputed per-position priors and values.

    Returns the root visit counts and summed values.
    """
    A = heap_of.shape[0]
    M = sims + 1
    N = np.zeros((M, A), np.int64)
    W = np.zeros((M, A), np.float64)
    P = np.zeros((M, A), np.float64)
    child = np.full((M, A), -1, np.int64)
    legal = np.zeros((M, A), np.bool_)
    terminal = np.zeros(M, np.bool_)
    node_pos = np.zeros(M, np.int64)
    path_nodes = np.zeros(M + 1, np.int64)
    path_actions = np.zeros(M + 1, np.int64)

    node_pos[0] = root_pos
    _decode_legal(root_pos, capacities, strides, heap_of, count_of, legal[0])
    for a in range(A):
        P[0, a] = root_priors[a]
    used = 1
    for _ in range(sims):
        depth, leaf = select_path_loop(N, W, P, child, legal, terminal, 0, c1, c2,
                                       c_puct, use_puct, path_nodes, path_actions)
        if leaf >= 0:
            value = -1.0
        else:
            parent = path_nodes[depth - 1]
            a = path_actions[depth - 1]
            pos = node_pos[parent] - count_of[a] * strides[heap_of[a]]
            m = used
            used += 1
            node_pos[m] = pos
            child[parent, a] = m
            if _decode_legal(pos, capacities, strides, heap_of, count_of, legal[m]):
                for b in range(A):
                    P[m, b] = prior_table[pos, b]
                value = float(value_table[pos])
            else:
                terminal[m] = True
                value = -1.0
        backup_loop(N, W, path_nodes, path_actions, depth, value)
    return N[0].copy(), W[0].copy()


def search_table_numpy(prior_table, value_table, root_pos, root_priors, capacities,
                       strides, heap_of, count_of, sims, c1, c2, c_puct, use_puct):
    A = heap_of.shape[0]
    M = sims + 1
    N = np.zeros((M, A), np.int64)
    W = np.zeros((M, A), np.float64)
    P = np.zeros((M, A), np.float64)
    child = np.full((M, A), -1, np.int64)
    legal = np.zeros((M, A), bool)
    terminal = np.zeros(M, bool)
    node_pos = np.zeros(M, np.int64)
    path_nodes = np.zeros(M + 1, np.int64)
    path_actions = np.zeros(M + 1, np.int64)
    radix = capacities + 1

    def decode(pos):
        return count_of <= (pos // strides[heap_of]) % radix[heap_of]

    node_pos[0] = root_pos
    legal[0] = decode(root_pos)
    P[0] = root_priors
    used = 1
    for _ in range(sims):
        depth, leaf = select_path_numpy(N, W, P, child, legal, terminal, 0, c1, c2,
                                        c_puct, use_puct, path_nodes, path_actions)
        if leaf >= 0:
            value = -1.0
        else:
            parent = path_nodes[depth - 1]
            a = path_actions[depth - 1]
            pos = node_pos[parent] - count_of[a] * strides[heap_of[a]]
            m = used
            used += 1
            node_pos[m] = pos
            child[parent, a] = m
            legal[m] = decode(pos)
            if legal[m].any():
                P[m] = prior_table[pos]
                value = float(value_table[pos])
            else:
                terminal[m] = True
                value = -1.0
        backup_numpy(N, W, path_nodes, path_actions, depth, value)
    return N[0].copy(), W[0].copy()


# ---------------------------------------------------------------------------
# LSTM gate arithmetic
#
# Pre-activations z are laid out as [input | forget | cell | output] blocks of
# width H. sigmoid(x) is computed as (1 + tanh(x/2)) / 2 in both flavours,
# which is overflow-free.


@njit
def lstm_cell_forward_loop(z, c_prev):
    B, H = c_prev.shape
    gates = np.empty_like(z)
    c = np.empty_like(c_prev)
    tanh_c = np.empty_like(c_prev)
    h = np.empty_like(c_prev)
    for b in range(B):
        for k in range(H):
            i = 0.5 * (1.0 + math.tanh(0.5 * z[b, k]))
            f = 0.5 * (1.0 + math.tanh(0.5 * z[b, H + k]))
            g = math.tanh(z[b, 2 * H + k])
            o = 0.5 * (1.0 + math.tanh(0.5 * z[b, 3 * H + k]))
            gates[b, k] = i
            gates[b, H + k] = f
            gates[b, 2 * H + k] = g
            gates[b, 3 * H + k] = o
            cc = f * c_prev[b, k] + i * g
            tc = math.tanh(cc)
            c[b, k] = cc
            tanh_c[b, k] = tc
            h[b, k] = o * tc
    return gates, c, tanh_c, h


def lstm_cell_forward_numpy(z, c_prev):
    H = c_prev.shape[1]
    gates = np.empty_like(z)
    gates[:, : 2 * H] = 0.5 * (1.0 + np.tanh(0.5 * z[:, : 2 * H]))
    gates[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
    gates[:, 3 * H :] = 0.5 * (1.0 + np.tanh(0.5 * z[:, 3 * H :]))
    i, f, g, o = gates[:, :H], gates[:, H : 2 * H], gates[:, 2 * H : 3 * H], gates[:, 3 * H :]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    return gates, c, tanh_c, o * tanh_c


@njit
def lstm_cell_backward_loop(dh, dc, gates, c_prev, tanh_c):
    B, H = c_prev.shape
    dz = np.empty_like(gates)
    dc_prev = np.empty_like(c_prev)
    for b in range(B):
        for k in range(H):
            i = gates[b, k]
            f = gates[b, H + k]
            g = gates[b, 2 * H + k]
            o = gates[b, 3 * H + k]
            tc = tanh_c[b, k]
            dct = dc[b, k] + dh[b, k] * o * (1.0 - tc * tc)
            dz[b, k] = dct * g * i * (1.0 - i)
            dz[b, H + k] = dct * c_prev[b, k] * f * (1.0 - f)
            dz[b, 2 * H + k] = dct * i * (1.0 - g * g)
            dz[b, 3 * H + k] = dh[b, k] * tc * o * (1.0 - o)
            dc_prev[b, k] = dct * f
    return dz, dc_prev


def lstm_cell_backward_numpy(dh, dc, gates, c_prev, tanh_c):
    H = c_prev.shape[1]
    i, f, g, o = gates[:, :H], gates[:, H : 2 * H], gates[:, 2 * H : 3 * H], gates[:, 3 * H :]
    dct = dc + dh * o * (1.0 - tanh_c * tanh_c)
    dz = np.empty_like(gates)
    dz[:, :H] = dct * g * i * (1.0 - i)
    dz[:, H : 2 * H] = dct * c_prev * f * (1.0 - f)
    dz[:, 2 * H : 3 * H] = dct * i * (1.0 - g * g)
    dz[:, 3 * H :] = dh * tanh_c * o * (1.0 - o)
    return dz, dct * f


# ---------------------------------------------------------------------------
# random play


@njit
def random_game_lengths_loop(capacities, uniforms):
    """Length of uniformly random games; ``uniforms[g, t]`` picks ply ``t`` of
    game ``g`` among all legal moves."""
    G = uniforms.shape[0]
    k = capacities.shape[0]
    lengths = np.zeros(G, np.int64)
    v = np.empty(k, np.int64)
    for gm in range(G):
        total = 0
        for j in range(k):
            v[j] = capacities[j]
            total += capacities[j]
        t = 0
        while total > 0:
            r = min(int(uniforms[gm, t] * total), total - 1)
            j = 0
            while r >= v[j]:
                r -= v[j]
                j += 1
            v[j] -= r + 1
            total -= r + 1
            t += 1
        lengths[gm] = t
    return lengths


def random_game_lengths_numpy(capacities, uniforms):
    capacities = np.asarray(capacities, dtype=np.int64)
    G = uniforms.shape[0]
    v = np.tile(capacities, (G, 1))
    lengths = np.zeros(G, np.int64)
    rows = np.arange(G)
    for t in range(uniforms.shape[1]):
        total = v.sum(axis=1)
        active = total > 0
        if not active.any():
            break
        r = np.minimum((uniforms[:, t] * total).astype(np.int64), np.maximum(total - 1, 0))
        cum = np.cumsum(v, axis=1)
        j = np.argmax(cum > r[:, None], axis=1)
        before = cum[rows, j] - v[rows, j]
        v[rows[active], j[active]] -= (r - before + 1)[active]
        lengths += active
    return lengths


grundy_dense = pick(grundy_dense_loop, grundy_dense_numpy)
minimax_dense = pick(minimax_dense_loop, minimax_dense_numpy)
select_path = pick(select_path_loop, select_path_numpy)
backup = pick(backup_loop, backup_numpy)
search_table = pick(search_table_loop, search_table_numpy)
# numpy's vectorised tanh beats the compiled per-element loop by an order of
# magnitude here (see benchmarks/bench_kernels.py), so the forward cell stays
# on numpy under either backend.
lstm_cell_forward = lstm_cell_forward_numpy
lstm_cell_backward = pick(lstm_cell_backward_loop, lstm_cell_backward_numpy)
random_game_lengths = pick(random_game_lengths_loop, random_game_lengths_numpy)
