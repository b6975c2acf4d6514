import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nimzero.agent import OracleStubNet, PolicyValueNet, TableEvaluator, TerminalPosition, UniformNet
from nimzero.game import (
    NimBoard,
    action_from_index,
    action_index,
    all_positions,
    apply_move,
    legal_mask,
    parse_move,
    position_index,
)
from nimzero.mcts import (
    SearchConfig,
    SearchTree,
    apply_root_noise,
    choose_action,
    posterior_policy,
    run_search,
    select_child,
    u_term,
    u_term_puct,
)
from nimzero.oracle import winning_moves

FIVE = (1, 3, 5, 7, 9)


def test_u_term_values():
    assert u_term(0.5, 0, 0) == 0.0
    expected = 0.5 * math.sqrt(4) / 2 * (0.25 + math.log((4 + 19652 + 1) / 19652))
    assert u_term(0.5, 1, 4) == pytest.approx(expected)
    assert u_term_puct(0.5, 1, 4, 2.0) == pytest.approx(1.0)


def test_config_validation():
    for bad in (dict(simulations=0), dict(dirichlet_epsilon=1.5), dict(dirichlet_alpha=0),
                dict(c2=0), dict(temperature_plies=-1)):
        with pytest.raises(ValueError):
            SearchConfig(**bad)
    cfg = SearchConfig()
    assert cfg.for_evaluation().dirichlet_epsilon == 0.0
    assert [cfg.temperature(p) for p in range(5)] == [1, 1, 1, 0, 0]


def test_fresh_node_picks_lowest_legal_index():
    tree = SearchTree(FIVE)
    tree.add_node(position_index(NimBoard(FIVE, (0, 3, 5, 7, 9))))
    tree.P[0] = OracleStubNet().evaluate(NimBoard(FIVE, (0, 3, 5, 7, 9))).priors
    assert str(select_child(tree, 0, SearchConfig())) == "b1"


def test_stub_prefers_e9_after_first_expansion():
    result = run_search(NimBoard.full(FIVE), OracleStubNet(), SearchConfig(1, dirichlet_epsilon=0))
    # the first simulation had no visits to weigh, so it went to a1
    assert result.visits[0] == 1
    assert str(select_child(result.tree, 0, SearchConfig())) == "e9"


@pytest.mark.parametrize("sims", [1, 2, 7, 50, 333])
def test_root_visits_sum_to_simulations(sims):
    board = NimBoard(FIVE, (1, 2, 0, 7, 9))
    rng = np.random.default_rng(sims)
    for net in (OracleStubNet(), TableEvaluator(OracleStubNet(), FIVE), UniformNet()):
        result = run_search(board, net, SearchConfig(sims), rng)
        assert result.total_visits == sims
        assert np.all(result.visits[~legal_mask(board)] == 0)


@given(st.tuples(*(st.integers(0, n) for n in FIVE)), st.integers(0, 2**31),
       st.sampled_from([None, 1.5]))
def test_fused_and_stepwise_agree(current, seed, c_puct):
    if not any(current):
        return
    board = NimBoard(FIVE, current)
    net = PolicyValueNet(FIVE, hidden_size=8, rng=np.random.default_rng(0))
    table = _table_cache.setdefault("pv", TableEvaluator(net, FIVE))
    config = SearchConfig(40, c_puct=c_puct)
    fused = run_search(board, table, config, np.random.default_rng(seed))
    # the same float32 table, split in two pages so search goes leaf by leaf
    paged = _paged_from(table)
    stepwise = run_search(board, paged, config, np.random.default_rng(seed))
    assert stepwise.tree is not None and fused.tree is None
    assert np.array_equal(fused.visits, stepwise.visits)
    assert fused.root_value == pytest.approx(stepwise.root_value, abs=1e-9)


_table_cache = {}


def _paged_from(table):
    paged = TableEvaluator(table.source, FIVE, page_size=table.size // 2 + 1)
    priors, values = table.full_table()
    half = paged.page_size
    paged._pages = {0: (priors[:half], values[:half]), 1: (priors[half:], values[half:])}
    return paged


def test_terminal_children_are_wins_for_the_mover():
    board = NimBoard(FIVE, (0, 0, 0, 0, 3))
    result = run_search(board, UniformNet(), SearchConfig(60, dirichlet_epsilon=0))
    assert int(np.argmax(result.visits)) == action_index(parse_move("e3"), FIVE)
    assert result.root_value > 0.5
    with pytest.raises(TerminalPosition):
        run_search(NimBoard(FIVE, (0,) * 5), UniformNet(), SearchConfig())


def test_value_is_negamax_of_stub():
    # lost position: every move hands the opponent a win, so only the
    # opponent's exploratory replies can lift the backed-up value above -1
    board = NimBoard(FIVE, (1, 3, 5, 7, 0))
    result = run_search(board, OracleStubNet(), SearchConfig(30, dirichlet_epsilon=0))
    assert result.root_value < -0.8
    first = run_search(board, OracleStubNet(), SearchConfig(16, dirichlet_epsilon=0))
    assert first.root_value == pytest.approx(-1.0)
    assert result.prior_value == -1.0


def test_root_noise():
    legal = np.array([True, False, True, True])
    priors = np.array([1.0, 0.0, 0.0, 0.0])
    rng = np.random.default_rng(0)
    state = rng.bit_generator.state
    out = apply_root_noise(priors, legal, SearchConfig(dirichlet_epsilon=0.0), rng)
    assert np.array_equal(out, priors) and rng.bit_generator.state == state
    out = apply_root_noise(priors, legal, SearchConfig(), rng)
    assert out[1] == 0.0 and np.isclose(out.sum(), 1.0) and out[0] >= 0.75


def test_posterior_and_choice():
    visits = np.array([0, 3, 1, 0])
    assert posterior_policy(visits, 1.0).tolist() == [0, 0.75, 0.25, 0]
    assert posterior_policy(visits, 0).tolist() == [0, 1, 0, 0]
    sharp = posterior_policy(np.array([10**6, 10**6 - 1]), 0.01)
    assert np.all(np.isfinite(sharp)) and np.isclose(sharp.sum(), 1)
    assert choose_action(posterior_policy(visits, 0), 0, None) == 1
    with pytest.raises(ValueError):
        posterior_policy(np.zeros(3), 1.0)


def test_tree_reuse_keeps_statistics():
    board = NimBoard.full(FIVE)
    config = SearchConfig(80, dirichlet_epsilon=0, reuse_tree=True)
    first = run_search(board, OracleStubNet(), config)
    a = action_index(parse_move("e9"), FIVE)
    sub = first.tree.advance(a)
    assert sub is not None
    child_visits = first.tree.N[first.tree.child[0, a]].sum()
    assert sub.N[0].sum() == child_visits
    after = apply_move(board, action_from_index(a, FIVE))
    second = run_search(after, OracleStubNet(), config, tree=sub)
    assert second.total_visits == 80
    assert second.tree.N[0].sum() == child_visits + 80


@pytest.mark.parametrize("initial", [(1, 2, 2), (1, 3, 5)])
def test_stub_search_finds_winning_moves(initial):
    for row in all_positions(initial):
        board = NimBoard(initial, tuple(row))
        wins = winning_moves(board)
        if not wins:
            continue
        result = run_search(board, OracleStubNet(), SearchConfig(50).for_evaluation())
        best = int(np.argmax(posterior_policy(result.visits, 0)))
        assert best in {action_index(m, initial) for m in wins}
