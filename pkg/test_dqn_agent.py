#!/usr/bin/env python3
"""Tests for the DQN agent: exploration, replay, TD targets, schedules, syncs and checkpoints."""

import logging
import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from core.config_loader import ConfigError, ConfigLoader
from core.dqn_agent import (ACTIONS, AgentConfig, DQNAgent, ReplayMemory, TrainingError, curriculum_rate,
                            epsilon_for_episode, run_episode, select_action, td_target,
                            training_curriculum)
from core.environment import TrafficEnvironment
from core.neural_net import init_params
from core.rewards import named_spec

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def small_agent(seed=0, obs_size=8, **overrides):
    data = {'minibatch_size': 4, 'replay_capacity': 64, 'target_sync_period': 2,
            'updates_per_episode': 3, 'learning_rate': 1e-3}
    data.update(overrides)
    return DQNAgent(AgentConfig.from_dict(data), [obs_size, 6, 3], seed=seed, reward_name='queues', replica=0)


def fill_memory(agent, count, seed=0):
    rng = np.random.default_rng(seed)
    size = agent.memory.observation_size
    for _ in range(count):
        agent.remember(rng.normal(size=size), int(rng.choice(ACTIONS)), float(rng.normal()),
                       rng.normal(size=size))


def test_greedy_selection_and_ties():
    rng = np.random.default_rng(0)
    assert select_action(np.array([1.0, 3.0, 2.0]), 0.0, rng) == 1
    assert select_action(np.array([2.0, 2.0, 1.0]), 0.0, rng) == 0, "Ties go to the lowest index"


def test_full_exploration_is_uniform():
    """With epsilon 1 the three actions pass a chi-squared uniformity test."""
    print("🧪 Testing epsilon-greedy exploration")
    print("=" * 50)
    rng = np.random.default_rng(123)
    q = np.array([5.0, 0.0, -5.0])
    draws = [select_action(q, 1.0, rng) for _ in range(30000)]
    counts = np.bincount(draws, minlength=3)
    result = stats.chisquare(counts)
    print(f"   counts {counts.tolist()}, p = {result.pvalue:.3f}")
    assert result.pvalue > 0.01, f"Exploration not uniform: {counts}"
    print("✅ Uniform exploration")


def test_td_target():
    params = init_params([4, 5, 3], seed=0).zeros_like()
    next_states = np.zeros((1, 4))
    assert td_target([1.0], next_states, params, 0.8) == pytest.approx([1.0])

    params.biases[-1][:] = [2.0, 0.0, 1.0]
    assert td_target([1.0], next_states, params, 0.8) == pytest.approx([2.6])
    assert td_target([1.0], next_states, params, 0.0) == pytest.approx([1.0])


def test_replay_memory_is_fifo():
    memory = ReplayMemory(capacity=3, observation_size=2)
    for i in range(5):
        memory.push(np.full(2, i), i % 3, float(i), np.full(2, i + 1))
    assert len(memory) == 3
    ordered = memory.ordered_indices()
    assert memory.rewards[ordered].tolist() == [2.0, 3.0, 4.0], "Oldest transitions must be evicted first"
    assert memory.states.dtype == np.float32

    sample = memory.sample(3, np.random.default_rng(0))
    assert sorted(sample['rewards'].tolist()) == [2.0, 3.0, 4.0], "Sampling must be without replacement"
    assert sample['states'].dtype == np.float64


def test_replay_rejects_non_finite_rewards():
    memory = ReplayMemory(capacity=3, observation_size=2)
    with pytest.raises(TrainingError):
        memory.push(np.zeros(2), 0, float('nan'), np.zeros(2))


def test_epsilon_schedule():
    assert epsilon_for_episode(1, 1500) == 1.0
    assert epsilon_for_episode(901, 1500) == pytest.approx(0.05)
    assert epsilon_for_episode(1500, 1500) == pytest.approx(0.05)
    middle = epsilon_for_episode(451, 1500)
    assert middle == pytest.approx(1.0 + (0.05 - 1.0) * 0.5)


def test_training_curriculum():
    assert curriculum_rate(1, 1500) == pytest.approx(1200.0)
    assert curriculum_rate(1500, 1500) == pytest.approx(2571.0)
    assert round(curriculum_rate(750, 1500), 1) == pytest.approx(1885.0)
    rates = training_curriculum(1500)
    assert len(rates) == 1500 and all(b > a for a, b in zip(rates, rates[1:]))
    assert curriculum_rate(1, 1) == 1200.0


def test_agent_config_validation():
    with pytest.raises(ConfigError):
        AgentConfig.from_dict({'gamma': 1.5})
    with pytest.raises(ConfigError):
        AgentConfig.from_dict({'replay_capacity': 10, 'minibatch_size': 20})


def test_underfull_replay_skips_update():
    agent = small_agent()
    fill_memory(agent, 2)
    before = [a.copy() for a in agent.params.arrays()]
    result = agent.end_episode()
    assert result['losses'] == []
    assert all(np.array_equal(a, b) for a, b in zip(before, agent.params.arrays()))


def test_target_sync_period():
    """The target network equals the online network bit for bit after every second episode."""
    print("🧪 Testing target network syncs")
    agent = small_agent()
    fill_memory(agent, 32)

    first = agent.end_episode()
    assert len(first['losses']) == 3 and not first['synced']
    assert not agent.target_params.equals(agent.params), "Target must lag the online network"

    second = agent.end_episode()
    assert second['synced']
    assert agent.target_params.equals(agent.params)
    assert agent.target_params.weights[0] is not agent.params.weights[0]
    print("✅ Target synced on schedule")


def test_same_seed_same_agent():
    a, b = small_agent(seed=5), small_agent(seed=5)
    assert a.params.equals(b.params)
    fill_memory(a, 20, seed=1)
    fill_memory(b, 20, seed=1)
    a.end_episode()
    b.end_episode()
    assert a.params.equals(b.params)
    observation = np.ones(8)
    assert [a.act(observation, epsilon=0.5) for _ in range(50)] == [b.act(observation, epsilon=0.5) for _ in range(50)]


def test_checkpoint_round_trip():
    print("🧪 Testing agent checkpoints")
    temp_dir = Path(tempfile.mkdtemp())
    try:
        agent = small_agent(seed=3)
        fill_memory(agent, 16)
        agent.end_episode()
        agent.set_episode_epsilon(10, 100)
        agent.save_checkpoint(str(temp_dir))
        for name in ('online.weights', 'target.weights', 'optimizer.npz', 'agent.json'):
            assert (temp_dir / name).exists(), f"Missing {name}"

        restored = DQNAgent.load_checkpoint(str(temp_dir))
        assert restored.params.equals(agent.params)
        assert restored.target_params.equals(agent.target_params)
        assert restored.episodes_done == 1
        assert restored.epsilon == agent.epsilon
        assert restored.network.adam.step == agent.network.adam.step
        assert restored.reward_name == 'queues'
        assert len(restored.memory) == 0, "Replay memory starts empty after a restore"
        assert restored.rng.random() == agent.rng.random()
        print("✅ Checkpoint restored")
    finally:
        shutil.rmtree(temp_dir)


def test_run_episode_against_environment():
    """A short training episode on the real environment grows the replay and is reproducible."""
    print("🧪 Testing run_episode")
    config = ConfigLoader.from_dict({'encoder': {'history_length': 2}})

    def one_run():
        env = TrafficEnvironment.from_config(config, named_spec('queues'), episode_steps=300)
        agent = DQNAgent(AgentConfig.from_dict({'minibatch_size': 4, 'replay_capacity': 500,
                                                'updates_per_episode': 2}),
                         [env.observation_size, 8, 3], seed=1)
        result = run_episode(agent, env, train_mode=True, seed=17, epsilon=0.3)
        return agent, env, result

    agent_a, env_a, result_a = one_run()
    agent_b, _, result_b = one_run()

    assert env_a.world.step == 300 and env_a.time == pytest.approx(180.0)
    assert len(agent_a.memory) == result_a['decisions'] > 0
    assert result_a['total_reward'] <= 0.0, "Queue rewards are never positive"
    assert result_a['total_reward'] == result_b['total_reward']
    assert agent_a.params.equals(agent_b.params), "Same seeds must give the same trained parameters"
    print(f"✅ {result_a['decisions']} decisions, total reward {result_a['total_reward']:.1f}")


if __name__ == "__main__":
    test_greedy_selection_and_ties()
    test_full_exploration_is_uniform()
    test_td_target()
    test_replay_memory_is_fifo()
    test_replay_rejects_non_finite_rewards()
    test_epsilon_schedule()
    test_training_curriculum()
    test_agent_config_validation()
    test_underfull_replay_skips_update()
    test_target_sync_period()
    test_same_seed_same_agent()
    test_checkpoint_round_trip()
    test_run_episode_against_environment()
    print("\n🎉 DQN agent tests passed!")
