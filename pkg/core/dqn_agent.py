#!/usr/bin/env python3
"""
Deep Q-Network agent.

Epsilon-greedy action selection at decision points, a FIFO replay memory,
TD targets from a lagged target network, minibatch training at the end of
every episode and a target sync every ``target_sync_period`` episodes.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .baselines import StagePolicy
from .config_loader import ConfigError
from .neural_net import (AdamState, Minibatch, NetworkParams, QNetwork, copy_params, forward,
                         load_weights, save_weights)
from .sensors import SensorFrame
from .signal_controller import SELECTABLE_STAGES, ControllerState

logger = logging.getLogger(__name__)

ACTIONS = SELECTABLE_STAGES


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite loss or parameters."""

    def __init__(self, message: str, replica: Optional[int] = None, episode: Optional[int] = None,
                 reward_name: Optional[str] = None):
        context = ', '.join(f"{k}={v}" for k, v in
                            (('replica', replica), ('episode', episode), ('reward', reward_name))
                            if v is not None)
        super().__init__(f"{message} ({context})" if context else message)
        self.replica = replica
        self.episode = episode
        self.reward_name = reward_name


@dataclass
class AgentConfig:
    gamma: float = 0.8
    learning_rate: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    replay_capacity: int = 100000
    target_sync_period: int = 10
    minibatch_size: int = 512
    updates_per_episode: int = 1
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.6

    @classmethod
    def from_dict(cls, data: Dict) -> 'AgentConfig':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        config = cls(**known)
        config.validate()
        return config

    def validate(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.replay_capacity < self.minibatch_size:
            raise ConfigError("replay_capacity must be >= minibatch_size")
        if self.target_sync_period < 1 or self.updates_per_episode < 0:
            raise ConfigError("target_sync_period must be >= 1 and updates_per_episode >= 0")
        for name in ('epsilon_start', 'epsilon_end', 'epsilon_decay_fraction'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")


class ReplayMemory:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, observation_size: int):
        self.capacity = capacity
        self.observation_size = observation_size
        self.states = np.zeros((capacity, observation_size), dtype=np.float32)
        self.next_states = np.zeros((capacity, observation_size), dtype=np.float32)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def push(self, state: np.ndarray, action: int, reward: float, next_state: np.ndarray):
        if not np.isfinite(reward):
            raise TrainingError(f"Non-finite reward {reward} offered to replay memory")
        slot = self.inserted % self.capacity
        self.states[slot] = state
        self.actions[slot] = action
        self.rewards[slot] = reward
        self.next_states[slot] = next_state
        self.inserted += 1

    def ordered_indices(self) -> np.ndarray:
        """Slots from oldest to newest."""
        if self.inserted <= self.capacity:
            return np.arange(self.inserted)
        start = self.inserted % self.capacity
        return np.concatenate([np.arange(start, self.capacity), np.arange(start)])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        indices = rng.choice(len(self), size=batch_size, replace=False)
        return {
            'states': self.states[indices].astype(np.float64),
            'actions': self.actions[indices],
            'rewards': self.rewards[indices],
            'next_states': self.next_states[indices].astype(np.float64),
        }


def select_action(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy action index; greedy ties go to the lowest index."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))


def td_target(rewards, next_states: np.ndarray, target_params: NetworkParams, gamma: float):
    """y = R + gamma * max_a Q(s', a; target). Episode truncation bootstraps like any other step."""
    next_q = forward(target_params, next_states)
    return np.asarray(rewards, dtype=np.float64) + gamma * np.max(next_q, axis=-1)


def epsilon_for_episode(episode: int, total_episodes: int, start: float = 1.0, end: float = 0.05,
                        decay_fraction: float = 0.6) -> float:
    """Linear decay from ``start`` at episode 1 to ``end`` after ``decay_fraction`` of the episodes."""
    decay_episodes = max(1, int(round(decay_fraction * total_episodes)))
    progress = min(1.0, max(0.0, (episode - 1) / decay_episodes))
    value = start + (end - start) * progress
    return float(min(max(value, min(start, end)), max(start, end)))


def curriculum_rate(episode: int, total_episodes: int, start_rate: float = 1200.0,
                    end_rate: float = 2571.0) -> float:
    """Vehicle rate for a 1-based episode, linear from ``start_rate`` to ``end_rate``."""
    if total_episodes <= 1:
        return float(start_rate)
    return start_rate + (end_rate - start_rate) * (episode - 1) / (total_episodes - 1)


def training_curriculum(total_episodes: int = 1500, start_rate: float = 1200.0,
                        end_rate: float = 2571.0) -> List[float]:
    return [curriculum_rate(e, total_episodes, start_rate, end_rate) for e in range(1, total_episodes + 1)]


@dataclass
class EpisodeStats:
    episode: int
    epsilon: float
    vehicle_rate: float
    total_reward: float
    decisions: int
    mean_loss: Optional[float]
    updates: int
    synced: bool
    mean_vehicle_wait: float
    mean_ped_wait: float

    def to_dict(self) -> Dict:
        return asdict(self)


class DQNAgent(StagePolicy):
    """Online Q-network, target network, replay memory and exploration state."""

    name = 'dqn'

    def __init__(self, config: AgentConfig, layer_sizes: Sequence[int], seed: int = 0,
                 reward_name: Optional[str] = None, replica: Optional[int] = None,
                 dtype: str = 'float64'):
        self.config = config
        self.seed = seed
        self.reward_name = reward_name
        self.replica = replica
        seeds = np.random.SeedSequence(seed).spawn(2)
        init_seed = int(seeds[0].generate_state(1)[0])
        self.network = QNetwork(layer_sizes, seed=init_seed, learning_rate=config.learning_rate,
                                beta1=config.adam_beta1, beta2=config.adam_beta2,
                                epsilon=config.adam_epsilon, dtype=dtype)
        self.target_params = copy_params(self.network.params)
        self.memory = ReplayMemory(config.replay_capacity, layer_sizes[0])
        self.rng = np.random.default_rng(seeds[1])
        self.epsilon = config.epsilon_start
        self.episodes_done = 0

    @property
    def params(self) -> NetworkParams:
        return self.network.params

    def q_values(self, observation: np.ndarray) -> np.ndarray:
        return self.network.predict(observation)

    def act(self, observation: np.ndarray, frame: Optional[SensorFrame] = None,
            ctrl: Optional[ControllerState] = None, epsilon: Optional[float] = None) -> int:
        eps = self.epsilon if epsilon is None else epsilon
        return ACTIONS[select_action(self.q_values(observation), eps, self.rng)]

    def remember(self, state: np.ndarray, stage: int, reward: float, next_state: np.ndarray):
        self.memory.push(state, ACTIONS.index(stage), reward, next_state)

    def train_minibatch(self) -> Optional[float]:
        if len(self.memory) < self.config.minibatch_size:
            return None
        sample = self.memory.sample(self.config.minibatch_size, self.rng)
        targets = td_target(sample['rewards'], sample['next_states'], self.target_params, self.config.gamma)
        batch = Minibatch(inputs=sample['states'], actions=sample['actions'], targets=targets)
        value = self.network.train_on_batch(batch)
        if not np.isfinite(value) or not self.network.params.is_finite():
            raise TrainingError(f"Non-finite loss {value}", self.replica, self.episodes_done + 1,
                                self.reward_name)
        return value

    def sync_target(self):
        self.target_params = copy_params(self.network.params)

    def end_episode(self) -> Dict:
        """Minibatch updates, episode bookkeeping and the periodic target sync."""
        losses = []
        for _ in range(self.config.updates_per_episode):
            value = self.train_minibatch()
            if value is None:
                logger.warning(f"Replay memory holds {len(self.memory)} transitions, fewer than "
                               f"minibatch {self.config.minibatch_size}; update skipped")
                break
            losses.append(value)
        self.episodes_done += 1
        synced = self.episodes_done % self.config.target_sync_period == 0
        if synced:
            self.sync_target()
            logger.debug(f"Target network synced after episode {self.episodes_done}")
        return {'losses': losses, 'synced': synced}

    def set_episode_epsilon(self, episode: int, total_episodes: int):
        self.epsilon = epsilon_for_episode(episode, total_episodes, self.config.epsilon_start,
                                           self.config.epsilon_end, self.config.epsilon_decay_fraction)

    # ------------------------------------------------------------------
    # Checkpoints
    # ------------------------------------------------------------------

    def save_checkpoint(self, directory: str, extra: Optional[Dict] = None):
        path = Path(directory)
        path.mkdir(parents=True, exist_ok=True)
        save_weights(self.network.params, str(path / 'online.weights'))
        save_weights(self.target_params, str(path / 'target.weights'))
        self.network.adam.save(str(path / 'optimizer.npz'))
        meta = {
            'agent_config': asdict(self.config),
            'layer_sizes': self.network.layer_sizes,
            'episodes_done': self.episodes_done,
            'epsilon': self.epsilon,
            'seed': self.seed,
            'reward_name': self.reward_name,
            'replica': self.replica,
            'rng_state': self.rng.bit_generator.state,
        }
        meta.update(extra or {})
        with open(path / 'agent.json', 'w') as f:
            json.dump(meta, f, indent=2, sort_keys=True, default=str)
        logger.info(f"Checkpoint written to {path}")

    @classmethod
    def load_checkpoint(cls, directory: str, config: Optional[AgentConfig] = None) -> 'DQNAgent':
        """Restore networks, optimizer and counters. Replay memory starts empty."""
        path = Path(directory)
        with open(path / 'agent.json') as f:
            meta = json.load(f)
        agent_config = config or AgentConfig.from_dict(meta['agent_config'])
        agent = cls(agent_config, meta['layer_sizes'], seed=meta['seed'],
                    reward_name=meta.get('reward_name'), replica=meta.get('replica'))
        agent.network.params = load_weights(str(path / 'online.weights'), meta['layer_sizes'])
        agent.target_params = load_weights(str(path / 'target.weights'), meta['layer_sizes'])
        agent.network.adam = AdamState.load(str(path / 'optimizer.npz'), agent.network.params,
                                            learning_rate=agent_config.learning_rate,
                                            beta1=agent_config.adam_beta1, beta2=agent_config.adam_beta2,
                                            epsilon=agent_config.adam_epsilon)
        agent.episodes_done = meta['episodes_done']
        agent.epsilon = meta['epsilon']
        if 'rng_state' in meta:
            agent.rng.bit_generator.state = meta['rng_state']
        logger.info(f"Loaded checkpoint from {path} (episode {agent.episodes_done})")
        return agent


def run_episode(agent: DQNAgent, env, train_mode: bool = True, seed: Optional[int] = None,
                epsilon: Optional[float] = None) -> Dict:
    """Drive one episode with the agent; in train mode grow the replay memory and train at the end."""
    observation = env.reset(seed)
    eps = (agent.epsilon if train_mode else 0.0) if epsilon is None else epsilon
    total_reward = 0.0
    while not env.done:
        stage = agent.act(observation, env.frame, env.ctrl, epsilon=eps)
        next_observation, reward, _, _ = env.step(stage)
        if train_mode:
            agent.remember(observation, stage, reward, next_observation)
        total_reward += reward if reward is not None else 0.0
        observation = next_observation

    result = {'total_reward': total_reward, 'decisions': env.decisions, 'epsilon': eps,
              'losses': [], 'synced': False}
    if train_mode:
        result.update(agent.end_episode())
    return result
