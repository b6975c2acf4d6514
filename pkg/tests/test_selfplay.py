import csv
from dataclasses import replace

import numpy as np
import pytest

from nimzero.agent import OracleStubNet, PolicyValueNet, TableEvaluator, UniformNet
from nimzero.nn.optim import Adam
from nimzero.selfplay import (
    METRIC_COLUMNS,
    Episode,
    EpisodeStep,
    ReplayBuffer,
    TrainConfig,
    checkpoint_path,
    full_training_loop,
    generate_episodes,
    play_episode,
    read_metrics,
    train_step,
    training_iteration,
)


def _config(**kw):
    base = dict(board=(1, 2, 3), episodes_per_iteration=6, simulations=12, hidden_size=8,
                workers=1, eval_sample=200, batch_size=16)
    base.update(kw)
    return TrainConfig(**base)


def test_default_simulations_follow_heap_count():
    assert TrainConfig(board=(1, 3, 5, 7, 9)).simulations == 50
    assert TrainConfig(board=(1, 3, 5, 7, 9, 11)).simulations == 60
    assert TrainConfig(board=(1, 3, 5, 7, 9, 11, 13)).simulations == 100
    assert TrainConfig(board=(1, 3, 5, 7, 9), simulations=7).simulations == 7
    with pytest.raises(ValueError):
        TrainConfig(dirichlet_alpha=0)
    with pytest.raises(ValueError):
        TrainConfig(episodes_per_iteration=0)


def test_single_heap_episode():
    ep = play_episode(UniformNet(), _config(board=(1,)), np.random.default_rng(0))
    assert len(ep) == 1 and ep.winner == 0
    assert ep.reward(ep.steps[0]) == 1.0


def test_two_single_heaps_episode():
    ep = play_episode(UniformNet(), _config(board=(1, 1)), np.random.default_rng(0))
    assert len(ep) == 2 and ep.winner == 1
    _, _, rewards = ep.arrays()
    assert rewards.tolist() == [-1.0, 1.0]


def test_episode_posteriors_follow_temperature():
    config = _config(board=(1, 3, 5, 7, 9), simulations=30)
    ep = play_episode(OracleStubNet(), config, np.random.default_rng(1))
    for ply, step in enumerate(ep.steps):
        assert np.isclose(step.posterior.sum(), 1.0)
        assert step.posterior[step.action] > 0
        if ply >= config.temperature_plies:
            assert step.posterior.max() == 1.0
        assert step.mover == ply % 2
    _, _, rewards = ep.arrays()
    assert set(np.abs(rewards)) == {1.0}


def test_episode_with_tree_reuse():
    config = _config(board=(1, 3, 5), reuse_tree=True, simulations=20)
    ep = play_episode(OracleStubNet(), config, np.random.default_rng(2))
    assert ep.winner == 0  # the stub never gives away a won start


def _same(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x.winner == y.winner and len(x) == len(y)
        for s, t in zip(x.steps, y.steps):
            assert s.action == t.action and np.array_equal(s.posterior, t.posterior)


def test_generate_episodes_independent_of_workers():
    config = _config(board=(1, 3, 5), episodes_per_iteration=10)
    net = TableEvaluator(PolicyValueNet(config.board, 8, rng=np.random.default_rng(0)), config.board)
    one = generate_episodes(net, config, iteration=3, workers=1)
    three = generate_episodes(net, config, iteration=3, workers=3)
    assert len(one) == 10
    _same(one, three)
    other = generate_episodes(net, config, iteration=4, workers=1)
    assert any(a.steps[0].action != b.steps[0].action or len(a) != len(b)
               for a, b in zip(one, other))


def test_generate_episodes_paged_net_in_workers():
    config = _config(board=(1, 2), episodes_per_iteration=4)
    net = PolicyValueNet(config.board, 8, rng=np.random.default_rng(0))
    paged = TableEvaluator(net, config.board, page_size=2)
    _same(generate_episodes(paged, config, workers=1), generate_episodes(paged, config, workers=2))


def _episode(n_steps, winner=0):
    steps = [EpisodeStep(np.zeros(3, np.int8), np.array([1.0, 0, 0]), i % 2, 0)
             for i in range(n_steps)]
    return Episode(steps, winner)


def test_replay_window():
    buf = ReplayBuffer(window=2)
    buf.add([_episode(2), _episode(3)])
    buf.add([_episode(1)])
    buf.add([_episode(4)])
    assert len(buf) == 5 and buf.episode_count == 2 and buf.newest_size == 4
    restored = ReplayBuffer(window=2)
    restored.load_state_arrays(buf.state_arrays())
    for a, b in zip(buf.arrays(), restored.arrays()):
        assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        training_iteration(None, None, ReplayBuffer(), _config(), np.random.default_rng(0))


def test_memorises_a_single_episode():
    # one-hot targets, so the cross entropy can actually fall below 1e-3
    config = _config(board=(1, 2, 3), temperature_plies=0, simulations=16)
    ep = play_episode(OracleStubNet(), config, np.random.default_rng(0))
    states, policies, rewards = ep.arrays()
    net = PolicyValueNet(config.board, 32, rng=np.random.default_rng(0), dtype=np.float64)
    opt = Adam(net.named_params(), lr=1e-2)
    for _ in range(3000):
        p_loss, v_loss = train_step(net, opt, states, policies, rewards)
        if p_loss < 1e-3 and v_loss < 1e-3:
            break
    assert p_loss < 1e-3 and v_loss < 1e-3
    logits, values = net.forward(states)
    assert np.array_equal(np.argmax(logits, axis=1), np.argmax(policies, axis=1))
    assert np.array_equal(np.sign(values), np.sign(rewards))


def test_zero_iterations(tmp_path):
    run = full_training_loop(_config(iterations=0), tmp_path)
    assert checkpoint_path(tmp_path, 0).exists()
    assert not checkpoint_path(tmp_path, 1).exists()
    with open(tmp_path / "metrics.csv") as fh:
        assert list(csv.reader(fh)) == [METRIC_COLUMNS]
    assert run.metrics == []


def test_resume_reproduces_uninterrupted_run(tmp_path):
    config = _config(iterations=3)
    straight = full_training_loop(config, tmp_path / "a")
    full_training_loop(replace(config, iterations=2), tmp_path / "b")
    resumed = full_training_loop(config, tmp_path / "b", resume=True)
    a = read_metrics(tmp_path / "a" / "metrics.csv")
    b = read_metrics(tmp_path / "b" / "metrics.csv")
    assert len(a) == len(b) == 3
    for row_a, row_b in zip(a, b):
        for col in METRIC_COLUMNS[:-1]:
            assert row_a[col] == row_b[col], col
    assert np.array_equal(straight.net.get_flat(), resumed.net.get_flat())
    assert (tmp_path / "b" / "elo.csv").read_text() == (tmp_path / "a" / "elo.csv").read_text()
    assert len(straight.pool) == 4


def test_training_reduces_loss_on_fixed_buffer():
    config = _config(board=(1, 2, 3), episodes_per_iteration=20, batches_per_iteration=40)
    net = PolicyValueNet(config.board, 16, rng=np.random.default_rng(0))
    buf = ReplayBuffer()
    buf.add(generate_episodes(TableEvaluator(OracleStubNet(), config.board), config))
    opt = Adam(net.named_params(), lr=3e-3)
    first = training_iteration(net, opt, buf, config, np.random.default_rng(0))
    for i in range(5):
        last = training_iteration(net, opt, buf, config, np.random.default_rng(i + 1))
    assert last.value_loss < first.value_loss
    assert last.policy_loss < first.policy_loss
